"""Paired-run cohorts, replicability metrics and the m-multiplier sweep.

A cohort runs one algorithm several times with a shared internal seed and
distinct sample seeds. Outputs are compared by exact equality of their
canonical byte serialization; a tolerance would hide exactly the failures
replicability is about.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import time
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .mdp_core import TabularMdp, greedy_policy, optimal_return, policy_return, solve_q
from .rand_streams import internal_tree, sample_tree
from .rep_mdp import approximate_mdp
from .reprmax import RMaxParams, run_reprmax, run_rmax_baseline
from .rpvi import PviParams, run_pvi_baseline, run_rpvi

ALGORITHMS = ("rpvi", "pvi_baseline", "reprmax", "rmax_baseline", "approx_mdp")
BASE_M = 13000
DEFAULT_MULTIPLIERS = (1, 2, 4, 8, 16)
CSV_COLUMNS = ("algorithm", "m_multiplier", "rho_sq", "internal_seed", "largest_identical_frac",
               "unique_frac", "mean_eps_gap", "wallclock_s")
PLAN_TOL = 1e-9

# the output each algorithm is judged on
PRIMARY_OUTPUT = {
    "rpvi": "value",
    "pvi_baseline": "value",
    "reprmax": "trace",
    "rmax_baseline": "trace",
    "approx_mdp": "model",
}


class CohortError(RuntimeError):
    def __init__(self, sample_seed, cause: BaseException):
        self.sample_seed = sample_seed
        self.cause = cause
        super().__init__(f"run with sample seed {sample_seed} failed: {cause!r}")


def _sha(*arrays) -> str:
    h = hashlib.sha256()
    for arr in arrays:
        if isinstance(arr, (bytes, str)):
            h.update(arr.encode() if isinstance(arr, str) else arr)
        else:
            a = np.ascontiguousarray(arr)
            h.update(str(a.dtype).encode() + str(a.shape).encode())
            h.update(a.tobytes())
    return h.hexdigest()


@dataclass(frozen=True)
class PairedRunSpec:
    """One cohort: every run shares ``internal_seed``; one run per sample seed."""

    algorithm: str
    mdp: TabularMdp
    params: dict
    internal_seed: int | str
    sample_seeds: tuple
    workers: int = 1

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        object.__setattr__(self, "sample_seeds", tuple(self.sample_seeds))
        if self.num_runs < 2:
            raise ValueError("a cohort needs at least 2 runs")

    @property
    def num_runs(self) -> int:
        return len(self.sample_seeds)


@dataclass
class RunOutput:
    sample_seed: object
    hashes: dict
    policy: list
    eps_gap: float
    result: dict


def _rpvi_params(mdp: TabularMdp, p: dict) -> PviParams:
    return PviParams.for_mdp(
        mdp, p["epsilon"], p["rho"], p["delta"],
        m=p.get("m"), tau_override=p.get("tau"), rho_sq_override=p.get("rho_sq"),
        delta_sq_override=p.get("delta_sq"), iterations_override=p.get("iterations"),
        practical=bool(p.get("practical", False)),
    )


def rmax_params(mdp: TabularMdp, p: dict) -> RMaxParams:
    return RMaxParams.for_mdp(
        mdp, p["epsilon"], p["rho"], p["delta"], int(p["horizon"]),
        m=p.get("m"), rounds_override=p.get("rounds"), k=p.get("k"), w=p.get("w"),
        rho_sq_override=p.get("rho_sq"), tau_sq_override=p.get("tau"),
        delta_sq_override=p.get("delta_sq"), practical=bool(p.get("practical", False)),
    )


def run_one(algorithm: str, mdp: TabularMdp, params: dict, internal_seed, sample_seed,
            workers: int = 1, j_star: float | None = None) -> RunOutput:
    """Run one algorithm once and summarize its outputs as hashes.

    ``hashes`` has keys ``value``, ``policy``, ``model`` and ``trace`` (None
    when the algorithm has no such output).
    """
    internal, sample = internal_tree(internal_seed), sample_tree(sample_seed)
    hashes = {"value": None, "policy": None, "model": None, "trace": None}
    result: dict = {}
    if algorithm in ("rpvi", "pvi_baseline"):
        if algorithm == "rpvi":
            res = run_rpvi(mdp, _rpvi_params(mdp, params), internal, sample, workers=workers,
                           chunk=params.get("chunk"))
            result["audit_digest"] = res.audit.digest()
        else:
            res = run_pvi_baseline(mdp, params["epsilon"], params["delta"], int(params["m"]), sample,
                                   iterations=params.get("iterations"), workers=workers,
                                   chunk=params.get("chunk"))
        policy = res.policy
        hashes["value"] = _sha(res.q)
        result.update(m=res.m, iterations=res.iterations, practical=res.practical, q=res.q.tolist())
    elif algorithm in ("reprmax", "rmax_baseline"):
        if algorithm == "reprmax":
            res = run_reprmax(mdp, rmax_params(mdp, params), internal, sample)
        else:
            res = run_rmax_baseline(mdp, params["epsilon"], params["delta"], int(params["horizon"]),
                                    int(params["m"]), float(params.get("threshold", params["horizon"])),
                                    sample, rounds=params.get("rounds"))
        policy = res.policy
        q = solve_q(res.model.r_hat, res.model.planning_transitions(), mdp.gamma, PLAN_TOL)
        hashes["value"] = _sha(q)
        hashes["model"] = res.model.content_hash()
        hashes["trace"] = _sha(json.dumps(res.known_sequence()), hashes["model"], policy)
        result.update(rounds_run=res.rounds_run, known_sequence=res.known_sequence(),
                      p_hat=res.model.p_hat.tolist(), audit=res.audit)
    else:
        am = approximate_mdp(mdp, params["epsilon"], params["rho"], params["delta"], int(params["m"]),
                             internal, sample, mode=params.get("mode", "shared"),
                             practical=bool(params.get("practical", False)))
        q = solve_q(am.r_hat, am.planning_transitions(), mdp.gamma, PLAN_TOL)
        policy = greedy_policy(q)
        hashes["value"] = _sha(q)
        hashes["model"] = am.content_hash()
        result.update(m=am.m, mode=am.mode, p_hat=am.p_hat.tolist())
    hashes["policy"] = _sha(np.asarray(policy, dtype=np.int64))
    if j_star is None:
        j_star = optimal_return(mdp)
    gap = j_star - policy_return(mdp, policy)
    return RunOutput(sample_seed, hashes, [int(a) for a in policy], float(gap), result)


def _run_task(args):
    algorithm, mdp, params, internal_seed, sample_seed, j_star = args
    try:
        return run_one(algorithm, mdp, params, internal_seed, sample_seed, 1, j_star)
    except Exception as exc:  # noqa: BLE001 - re-raised with the seed attached
        raise CohortError(sample_seed, exc) from exc


def class_sizes(keys: Sequence) -> list[int]:
    """Sizes of the exact-equality classes, largest first."""
    return sorted(Counter(keys).values(), reverse=True)


def largest_identical_fraction(keys: Sequence) -> float:
    return class_sizes(keys)[0] / len(keys)


def unique_fraction(keys: Sequence) -> float:
    return len(set(keys)) / len(keys)


def pairwise_agreement(keys: Sequence) -> np.ndarray:
    k = np.array([str(x) for x in keys])
    return k[:, None] == k[None, :]


def pairwise_disagreement_rate(keys: Sequence) -> float:
    """Fraction of unordered run pairs whose outputs differ."""
    n = len(keys)
    agree = pairwise_agreement(keys)
    return float((n * n - agree.sum()) / (n * (n - 1)))


@dataclass
class ReplicationReport:
    algorithm: str
    primary_output: str
    runs: list[RunOutput]
    largest_identical_frac: float
    unique_frac: float
    class_sizes: list[int]
    pairwise_disagreement: float
    rates: dict
    eps_gaps: list[float]
    provenance: dict
    wallclock_s: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def num_runs(self) -> int:
        return len(self.runs)

    @property
    def mean_eps_gap(self) -> float:
        return float(np.mean(self.eps_gaps))

    @property
    def agreement(self) -> np.ndarray:
        return pairwise_agreement([r.hashes[self.primary_output] for r in self.runs])

    def to_dict(self, timing: bool = False) -> dict:
        out = {
            "algorithm": self.algorithm,
            "primary_output": self.primary_output,
            "num_runs": self.num_runs,
            "largest_identical_frac": self.largest_identical_frac,
            "unique_frac": self.unique_frac,
            "class_sizes": self.class_sizes,
            "pairwise_disagreement": self.pairwise_disagreement,
            "rates": self.rates,
            "mean_eps_gap": self.mean_eps_gap,
            "runs": [
                {"sample_seed": str(r.sample_seed), "hashes": r.hashes, "policy": r.policy, "eps_gap": r.eps_gap}
                for r in self.runs
            ],
            "provenance": self.provenance,
        }
        if timing:
            out["wallclock_s"] = self.wallclock_s
        return out


def run_cohort(spec: PairedRunSpec) -> ReplicationReport:
    """Execute every run of the cohort and compare outputs exactly.

    Runs are independent and deterministic from their seed pair, so the
    report does not depend on ``spec.workers``.
    """
    start = time.perf_counter()
    j_star = optimal_return(spec.mdp)
    tasks = [(spec.algorithm, spec.mdp, spec.params, spec.internal_seed, s, j_star) for s in spec.sample_seeds]
    if spec.workers > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            runs = list(pool.map(_run_task, tasks))
    else:
        runs = [_run_task(t) for t in tasks]
    primary = PRIMARY_OUTPUT[spec.algorithm]
    keys = [r.hashes[primary] for r in runs]
    rates = {
        kind: largest_identical_fraction([r.hashes[kind] for r in runs])
        for kind in ("policy", "value", "model", "trace")
        if runs[0].hashes[kind] is not None
    }
    provenance = {
        "internal_seed": str(spec.internal_seed),
        "sample_seeds": [str(s) for s in spec.sample_seeds],
        "params": {k: spec.params[k] for k in sorted(spec.params)},
        "mdp_hash": spec.mdp.content_hash(),
    }
    return ReplicationReport(
        algorithm=spec.algorithm,
        primary_output=primary,
        runs=runs,
        largest_identical_frac=largest_identical_fraction(keys),
        unique_frac=unique_fraction(keys),
        class_sizes=class_sizes(keys),
        pairwise_disagreement=pairwise_disagreement_rate(keys),
        rates=rates,
        eps_gaps=[r.eps_gap for r in runs],
        provenance=provenance,
        wallclock_s=time.perf_counter() - start,
    )


def default_rho_sq_values(mdp: TabularMdp, epsilon: float, rho: float, delta: float,
                          factors: Sequence[float] = (1, 10, 100)) -> list[float]:
    """The union-bound value rho/(|S||A|T) scaled by each factor."""
    base = PviParams.for_mdp(mdp, epsilon, rho, delta).rho_sq
    return [base * f for f in factors]


@dataclass
class SweepRow:
    algorithm: str
    m_multiplier: float
    rho_sq: float | None
    internal_seed: str
    largest_identical_frac: float
    unique_frac: float
    mean_eps_gap: float
    wallclock_s: float

    def csv_fields(self, timing: bool = False) -> list[str]:
        return [
            self.algorithm,
            str(self.m_multiplier),
            "" if self.rho_sq is None else repr(self.rho_sq),
            self.internal_seed,
            repr(self.largest_identical_frac),
            repr(self.unique_frac),
            repr(self.mean_eps_gap),
            repr(round(self.wallclock_s, 3)) if timing else "",
        ]


def sweep(mdp: TabularMdp, base_m: int, multipliers: Sequence[int], rho_sq_values: Sequence[float],
          sample_seeds: Sequence, internal_seed, epsilon: float = 0.02, rho: float = 0.2,
          delta: float = 0.001, tau: float | None = None, include_baseline: bool = True,
          csv_path: str | Path | None = None, timing: bool = False, workers: int = 1,
          on_row=None) -> list[SweepRow]:
    """rPVI cohorts over (m multiplier, rho_SQ), plus PVI baseline cohorts.

    ``tau`` defaults to eps/2, the tolerance with the (1 - gamma) factors
    suppressed; the (1 - gamma) eps / 2 form needs far more than 16 x base_m
    samples to replicate on the default grid. Samples are drawn in blocks of
    ``base_m`` calls, so a run's larger budgets extend its smaller ones
    rather than redrawing them. Rows are flushed to
    ``csv_path`` as they finish, so partial results survive a failure.
    """
    if base_m < 1:
        raise ValueError("base_m must be >= 1")
    tau = epsilon / 2 if tau is None else tau
    cells = [("rpvi", mult, rsq) for rsq in rho_sq_values for mult in multipliers]
    if include_baseline:
        cells += [("pvi_baseline", mult, None) for mult in multipliers]
    rows: list[SweepRow] = []
    fh = open(csv_path, "w", newline="") if csv_path is not None else None
    try:
        writer = csv.writer(fh, lineterminator="\n") if fh else None
        if writer:
            writer.writerow(CSV_COLUMNS)
            fh.flush()
        for algorithm, mult, rsq in cells:
            params = {"epsilon": epsilon, "rho": rho, "delta": delta, "m": int(base_m * mult),
                      "chunk": int(base_m)}
            if algorithm == "rpvi":
                params.update(tau=tau, rho_sq=rsq, practical=True)
            spec = PairedRunSpec(algorithm, mdp, params, internal_seed, tuple(sample_seeds), workers)
            rep = run_cohort(spec)
            row = SweepRow(algorithm, mult, rsq, str(internal_seed), rep.largest_identical_frac,
                           rep.unique_frac, rep.mean_eps_gap, rep.wallclock_s)
            rows.append(row)
            if writer:
                writer.writerow(row.csv_fields(timing))
                fh.flush()
            if on_row is not None:
                on_row(row)
    finally:
        if fh:
            fh.close()
    return rows


def write_sweep_csv(rows: Sequence[SweepRow], fh, timing: bool = False) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in rows:
        writer.writerow(row.csv_fields(timing))


def trend_report(rows: Sequence[SweepRow], threshold: float) -> dict:
    """Check the sweep trends per rho_SQ series.

    Returns, for each series, whether the largest-identical fraction is
    non-decreasing, whether the unique fraction is non-increasing, and the
    smallest multiplier reaching ``threshold`` (None if never).
    """
    series: dict = {}
    for r in rows:
        if r.algorithm == "rpvi":
            series.setdefault(r.rho_sq, []).append(r)
    out = {}
    for rsq, rs in series.items():
        rs = sorted(rs, key=lambda r: r.m_multiplier)
        li = [r.largest_identical_frac for r in rs]
        uf = [r.unique_frac for r in rs]
        crossing = next((r.m_multiplier for r in rs if r.largest_identical_frac >= threshold), None)
        out[rsq] = {
            "multipliers": [r.m_multiplier for r in rs],
            "largest_identical": li,
            "unique": uf,
            "non_decreasing": all(a <= b for a, b in zip(li, li[1:])),
            "non_increasing": all(a >= b for a, b in zip(uf, uf[1:])),
            "crossing_multiplier": crossing,
        }
    return out


def _number(text: str):
    x = float(text)
    return int(x) if x.is_integer() else x


def read_sweep_csv(path: str | Path) -> list[SweepRow]:
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append(SweepRow(
                rec["algorithm"], _number(rec["m_multiplier"]),
                float(rec["rho_sq"]) if rec["rho_sq"] else None, rec["internal_seed"],
                float(rec["largest_identical_frac"]), float(rec["unique_frac"]),
                float(rec["mean_eps_gap"]), float(rec["wallclock_s"]) if rec["wallclock_s"] else 0.0,
            ))
    return rows


_PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b")


def sweep_svg(rows: Sequence[SweepRow], threshold: float | None = None) -> str:
    """Two-panel line chart (largest identical, unique) against the multiplier."""
    series: dict = {}
    for r in rows:
        label = r.algorithm if r.rho_sq is None else f"{r.algorithm} rho_sq={r.rho_sq:.3g}"
        series.setdefault(label, []).append(r)
    mults = sorted({r.m_multiplier for r in rows})
    pw, ph, pad = 320, 220, 45
    width, height = 2 * (pw + pad) + pad, ph + 2 * pad + 20 * len(series)

    def x_of(m):
        if len(mults) == 1:
            return pw / 2
        return (math.log2(m) - math.log2(mults[0])) / (math.log2(mults[-1]) - math.log2(mults[0])) * pw

    def y_of(v):
        return ph - v * ph

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'font-family="sans-serif" font-size="11">',
             f'<rect width="{width}" height="{height}" fill="white"/>']
    for panel, (title, attr) in enumerate((("largest identical fraction", "largest_identical_frac"),
                                           ("unique fraction", "unique_frac"))):
        ox, oy = pad + panel * (pw + pad), pad
        parts.append(f'<g transform="translate({ox},{oy})">')
        parts.append(f'<rect width="{pw}" height="{ph}" fill="none" stroke="#444"/>')
        parts.append(f'<text x="{pw / 2}" y="-10" text-anchor="middle">{title}</text>')
        for v in (0.0, 0.5, 1.0):
            parts.append(f'<text x="-6" y="{y_of(v) + 4:.1f}" text-anchor="end">{v:g}</text>')
        for m in mults:
            parts.append(f'<text x="{x_of(m):.1f}" y="{ph + 14}" text-anchor="middle">{m}x</text>')
        if threshold is not None and panel == 0:
            y = y_of(threshold)
            parts.append(f'<line x1="0" x2="{pw}" y1="{y:.1f}" y2="{y:.1f}" stroke="#999" stroke-dasharray="4 3"/>')
        for i, (label, rs) in enumerate(series.items()):
            rs = sorted(rs, key=lambda r: r.m_multiplier)
            pts = " ".join(f"{x_of(r.m_multiplier):.1f},{y_of(getattr(r, attr)):.1f}" for r in rs)
            color = _PALETTE[i % len(_PALETTE)]
            parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>')
        parts.append("</g>")
    for i, label in enumerate(series):
        y = ph + 2 * pad + 20 * i
        color = _PALETTE[i % len(_PALETTE)]
        parts.append(f'<line x1="{pad}" x2="{pad + 20}" y1="{y - 4}" y2="{y - 4}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{pad + 26}" y="{y}">{label}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
