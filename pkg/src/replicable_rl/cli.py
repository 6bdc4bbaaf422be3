"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 validation failure, 3 runtime failure.
All outputs are deterministic functions of the inputs and seeds; wall-clock
fields are only written with ``--timing``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import gridworld
from .mdp_core import (
    MdpValidationError,
    TabularMdp,
    exact_value_iteration,
    greedy_policy,
    mdp_from_dict,
    optimal_return,
    policy_return,
    policy_values,
    validate,
)
from .replication_lab import (
    ALGORITHMS,
    BASE_M,
    DEFAULT_MULTIPLIERS,
    CohortError,
    PairedRunSpec,
    default_rho_sq_values,
    run_cohort,
    run_one,
    sweep,
    sweep_svg,
    write_sweep_csv,
)
from .rpvi import PviParams, theoretical_m, warn_if_astronomical

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2, 3
THREADS_ENV = "REPLICABLE_RL_THREADS"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _float_list(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _seed_list(text: str) -> list[str]:
    """Comma-separated seeds; ``a-b`` expands to the inclusive decimal range."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part and not part.lower().startswith("0x"):
            lo, hi = part.split("-", 1)
            out.extend(str(i) for i in range(int(lo), int(hi) + 1))
        else:
            out.append(part)
    return out


def _add_env(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group()
    src.add_argument("--mdp", help="MDP JSON file")
    src.add_argument("--grid", help="GridSpec JSON file, or 'default' for the built-in grid (the default)")
    p.add_argument("--gamma", type=float, help="override the discount factor")


def _add_budget(p: argparse.ArgumentParser) -> None:
    p.add_argument("--eps", type=float, default=0.02)
    p.add_argument("--rho", type=float, default=0.2)
    p.add_argument("--delta", type=float, default=0.001)
    p.add_argument("-H", "--horizon", type=int, default=None, help="episode length (R-max)")
    p.add_argument("-m", type=int, default=None, help="samples per phase/round/pair")
    p.add_argument("--m-multiplier", type=float, default=None, help=f"m = multiplier x {BASE_M}")
    p.add_argument("--rho-sq", type=float, default=None, help="per-query replicability budget")
    p.add_argument("--delta-sq", type=float, default=None, help="per-query failure budget")
    p.add_argument("--tau", type=float, default=None, help="per-query tolerance override")
    p.add_argument("--iterations", type=int, default=None, help="PVI phases T")
    p.add_argument("--rounds", type=int, default=None, help="R-max rounds T")
    p.add_argument("--threshold", type=float, default=None, help="R-max baseline visit threshold")
    p.add_argument("--chunk", type=int, default=None,
                   help="PVI sample block size; sweep cells use the base m")
    p.add_argument("--mode", choices=("shared", "per_tuple"), default="shared", help="approx_mdp sampling")
    p.add_argument("--practical", action="store_true", help="allow m below the theoretical requirement")


def _add_io(p: argparse.ArgumentParser, formats=("json",)) -> None:
    p.add_argument("--out", help="output path (default: stdout)")
    p.add_argument("--format", choices=formats, default=formats[0])
    p.add_argument("--threads", type=int, default=None, help=f"worker count (fallback: ${THREADS_ENV})")
    p.add_argument("--timing", action="store_true", help="include wall-clock fields")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="replicable-rl", description="Replicable tabular reinforcement learning.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("solve", help="run one algorithm once")
    p.add_argument("--algo", choices=ALGORITHMS, required=True)
    _add_env(p)
    _add_budget(p)
    p.add_argument("--internal-seed", default="0")
    p.add_argument("--sample-seed", default="1")
    _add_io(p)

    p = sub.add_parser("cohort", help="paired runs sharing the internal seed")
    p.add_argument("--algo", choices=ALGORITHMS, required=True)
    _add_env(p)
    _add_budget(p)
    p.add_argument("--internal-seed", default="0")
    p.add_argument("--sample-seeds", type=_seed_list, default=None, help="e.g. 1,2,3 or 1-30")
    p.add_argument("--num-runs", type=int, default=30, help="seeds 1..N when --sample-seeds is absent")
    _add_io(p)

    p = sub.add_parser("sweep", help="rPVI and PVI cohorts over m multipliers and rho_SQ values")
    _add_env(p)
    _add_budget(p)
    p.add_argument("--base-m", type=int, default=BASE_M)
    p.add_argument("--multipliers", type=_float_list, default=list(DEFAULT_MULTIPLIERS))
    p.add_argument("--rho-sq-values", type=_float_list, default=None,
                   help="default: rho/(|S||A|T) times 1, 10 and 100")
    p.add_argument("--internal-seed", default="0")
    p.add_argument("--sample-seeds", type=_seed_list, default=None)
    p.add_argument("--num-runs", type=int, default=30)
    p.add_argument("--no-baseline", action="store_true")
    p.add_argument("--svg", help="also write a two-panel SVG chart")
    _add_io(p, formats=("csv", "json"))

    p = sub.add_parser("oracle", help="exact value iteration or policy evaluation")
    _add_env(p)
    p.add_argument("--policy", help="comma-separated actions to evaluate instead of solving")
    p.add_argument("--tol", type=float, default=1e-10)
    _add_io(p)

    p = sub.add_parser("validate", help="check an MDP (or GridSpec) JSON file")
    _add_env(p)
    return parser


def _threads(args) -> int:
    if getattr(args, "threads", None) is not None:
        n = args.threads
    else:
        env = os.environ.get(THREADS_ENV, "").strip()
        try:
            n = int(env) if env else 1
        except ValueError:
            raise UsageError(f"${THREADS_ENV} must be an integer, got {env!r}") from None
    if n < 1:
        raise UsageError("thread count must be >= 1")
    return n


def _load_json(path: str):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise MdpValidationError([f"{path}: not valid JSON ({exc})"]) from exc


def _environment(args) -> tuple[TabularMdp, gridworld.GridSpec | None]:
    if args.mdp:
        mdp = mdp_from_dict(_load_json(args.mdp))
        spec = None
    else:
        spec = gridworld.default_paper_grid() if args.grid in (None, "default") else \
            gridworld.GridSpec.from_dict(_load_json(args.grid))
        mdp = gridworld.compile(spec)
    if args.gamma is not None:
        mdp = TabularMdp(mdp.rewards, mdp.transitions, args.gamma, mdp.initial_dist, mdp.r_max)
        report = validate(mdp)
        if not report.ok:
            raise MdpValidationError(report.problems)
    return mdp, spec


def _resolve_m(args) -> int | None:
    if args.m is not None and args.m_multiplier is not None:
        raise UsageError("give -m or --m-multiplier, not both")
    if args.m_multiplier is not None:
        return int(round(args.m_multiplier * BASE_M))
    return args.m


def _params(args, algo: str, mdp: TabularMdp) -> dict:
    m = _resolve_m(args)
    p = {"epsilon": args.eps, "rho": args.rho, "delta": args.delta}
    if algo == "rpvi":
        p.update(m=m, tau=args.tau, rho_sq=args.rho_sq, delta_sq=args.delta_sq,
                 iterations=args.iterations, practical=args.practical, chunk=args.chunk)
        if m is None:
            warn_if_astronomical(theoretical_m(PviParams.for_mdp(
                mdp, args.eps, args.rho, args.delta, tau_override=args.tau, rho_sq_override=args.rho_sq,
                delta_sq_override=args.delta_sq, iterations_override=args.iterations)))
    elif algo == "pvi_baseline":
        if m is None:
            m = BASE_M
        p.update(m=m, iterations=args.iterations, chunk=args.chunk)
    elif algo in ("reprmax", "rmax_baseline"):
        if args.horizon is None:
            raise UsageError(f"{algo} needs -H")
        p.update(horizon=args.horizon, m=m, rounds=args.rounds)
        if algo == "reprmax":
            p.update(tau=args.tau, rho_sq=args.rho_sq, delta_sq=args.delta_sq, practical=args.practical)
        else:
            if m is None:
                raise UsageError("rmax_baseline needs -m")
            p.update(threshold=args.threshold if args.threshold is not None else float(args.horizon))
    else:
        if m is None:
            raise UsageError("approx_mdp needs -m")
        p.update(m=m, mode=args.mode, practical=args.practical)
    return {k: v for k, v in p.items() if v is not None}


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _cmd_solve(args) -> int:
    mdp, spec = _environment(args)
    params = _params(args, args.algo, mdp)
    threads = _threads(args)
    start = time.perf_counter()
    run = run_one(args.algo, mdp, params, args.internal_seed, args.sample_seed, workers=threads)
    doc = {
        "algorithm": args.algo,
        "params": params,
        "internal_seed": str(args.internal_seed),
        "sample_seed": str(args.sample_seed),
        "mdp_hash": mdp.content_hash(),
        "policy": run.policy,
        "eps_gap": run.eps_gap,
        "hashes": run.hashes,
        "result": run.result,
    }
    if spec is not None:
        doc["policy_ascii"] = gridworld.render_policy(spec, run.policy)
    if args.timing:
        doc["wallclock_s"] = time.perf_counter() - start
    _emit(_dumps(doc), args.out)
    if args.out and spec is not None:
        sys.stdout.write(doc["policy_ascii"] + "\n")
    return EXIT_OK


def _seeds(args) -> list[str]:
    if args.sample_seeds:
        return args.sample_seeds
    if args.num_runs < 2:
        raise UsageError("need at least 2 runs")
    return [str(i) for i in range(1, args.num_runs + 1)]


def _cmd_cohort(args) -> int:
    mdp, _ = _environment(args)
    params = _params(args, args.algo, mdp)
    spec = PairedRunSpec(args.algo, mdp, params, args.internal_seed, tuple(_seeds(args)), _threads(args))
    report = run_cohort(spec)
    _emit(_dumps(report.to_dict(timing=args.timing)), args.out)
    return EXIT_OK


def _cmd_sweep(args) -> int:
    mdp, _ = _environment(args)
    rho_sq_values = args.rho_sq_values or default_rho_sq_values(mdp, args.eps, args.rho, args.delta)
    multipliers = [int(m) if float(m).is_integer() else m for m in args.multipliers]
    csv_path = args.out if args.format == "csv" else None
    rows = sweep(mdp, args.base_m, multipliers, rho_sq_values, _seeds(args), args.internal_seed,
                 epsilon=args.eps, rho=args.rho, delta=args.delta, tau=args.tau,
                 include_baseline=not args.no_baseline, csv_path=csv_path, timing=args.timing,
                 workers=_threads(args))
    if args.format == "csv" and not args.out:
        write_sweep_csv(rows, sys.stdout, args.timing)
    elif args.format == "json":
        doc = [
            {k: v for k, v in vars(r).items() if args.timing or k != "wallclock_s"}
            for r in rows
        ]
        _emit(_dumps(doc), args.out)
    if args.svg:
        Path(args.svg).write_text(sweep_svg(rows, 1 - args.rho))
    return EXIT_OK


def _cmd_oracle(args) -> int:
    mdp, spec = _environment(args)
    if args.policy:
        try:
            policy = np.array([int(a) for a in args.policy.split(",")], dtype=np.int64)
        except ValueError:
            raise UsageError("--policy must be comma-separated integers") from None
        if policy.shape != (mdp.num_states,) or policy.min() < 0 or policy.max() >= mdp.num_actions:
            raise MdpValidationError([f"policy must list one action in [0, {mdp.num_actions}) per state"])
        doc = {
            "policy": policy.tolist(),
            "values": policy_values(mdp, policy).tolist(),
            "return": policy_return(mdp, policy),
            "suboptimality": optimal_return(mdp, args.tol) - policy_return(mdp, policy),
        }
    else:
        q = exact_value_iteration(mdp, args.tol)
        policy = greedy_policy(q)
        doc = {
            "q": q.tolist(),
            "values": q.max(axis=1).tolist(),
            "policy": policy.tolist(),
            "return": policy_return(mdp, policy),
        }
    doc["mdp_hash"] = mdp.content_hash()
    if spec is not None:
        doc["policy_ascii"] = gridworld.render_policy(spec, doc["policy"])
    _emit(_dumps(doc), args.out)
    return EXIT_OK


def _cmd_validate(args) -> int:
    if args.mdp:
        data = _load_json(args.mdp)
        try:
            mdp = mdp_from_dict(data)
        except MdpValidationError as exc:
            problems = exc.problems
        else:
            problems = validate(mdp).problems
    elif args.grid:
        spec = gridworld.default_paper_grid() if args.grid == "default" else \
            gridworld.GridSpec.from_dict(_load_json(args.grid))
        problems = spec.problems()
        if not problems:
            gridworld.compile(spec)
    else:
        raise UsageError("validate needs --mdp or --grid")
    if problems:
        sys.stdout.write("invalid\n" + "".join(f"  {p}\n" for p in problems))
        return EXIT_INVALID
    sys.stdout.write("ok\n")
    return EXIT_OK


_COMMANDS = {
    "solve": _cmd_solve,
    "cohort": _cmd_cohort,
    "sweep": _cmd_sweep,
    "oracle": _cmd_oracle,
    "validate": _cmd_validate,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        sys.stderr.write(f"{exc}\n")
        return EXIT_USAGE
    except MdpValidationError as exc:
        sys.stderr.write(f"{exc}\n")
        return EXIT_INVALID
    except CohortError as exc:
        sys.stderr.write(f"{exc}\n")
        return EXIT_RUNTIME
    except FileNotFoundError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_USAGE
    except (ValueError, KeyError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - last-resort mapping to the runtime exit code
        sys.stderr.write(f"runtime failure: {exc!r}\n")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
