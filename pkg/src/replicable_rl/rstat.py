"""Replicable statistical queries.

The empirical mean of a [0, 1]-valued query is rounded to a grid
``{offset + k * alpha}`` whose offset is drawn from *internal* randomness.
Two runs that share the offset and whose empirical means are both within
``tau_prime`` of the truth land on different grid points with probability at
most ``2 * tau_prime / alpha``.

The tolerance is split as ``tau = tau_prime + alpha / 2``::

    tau_prime = tau * (rho - 2 delta) / (rho + 1 - 2 delta)
    alpha     = 2 tau / (rho + 1 - 2 delta)
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np


class SampleSizeError(ValueError):
    """The sample is smaller than the Hoeffding requirement for the query."""


@dataclass(frozen=True)
class RStatConfig:
    tau: float
    rho: float
    delta: float

    def __post_init__(self):
        for name in ("tau", "rho", "delta"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must be in (0, 1), got {v}")
        if not self.delta < self.rho / 2:
            raise ValueError(f"need delta < rho/2 so that tau' > 0 (delta={self.delta}, rho={self.rho})")

    @property
    def tau_prime(self) -> float:
        return self.tau * (self.rho - 2 * self.delta) / (self.rho + 1 - 2 * self.delta)

    @property
    def alpha(self) -> float:
        return 2 * self.tau / (self.rho + 1 - 2 * self.delta)

    @property
    def required_n(self) -> int:
        """Two-sided Hoeffding: log(2/delta) / (2 tau'^2)."""
        return math.ceil(math.log(2 / self.delta) / (2 * self.tau_prime**2))


def required_n(config: RStatConfig) -> int:
    return config.required_n


@dataclass(frozen=True)
class RStatResult:
    value: float
    empirical_mean: float
    offset: float
    grid_index: int
    alpha: float
    n: int
    practical: bool = False

    @property
    def grid_value(self) -> float:
        """The rounded value before clamping to [0, 1]."""
        return self.offset + self.grid_index * self.alpha


def draw_offset(config: RStatConfig, stream: np.random.Generator) -> float:
    return config.alpha * stream.random()


def round_to_grid(x: float, offset: float, alpha: float) -> int:
    """Index of the grid point nearest to x; exact midpoints round toward -inf."""
    return math.ceil((x - offset) / alpha - 0.5)


def rstat_from_mean(mean: float, n: int, config: RStatConfig, offset: float,
                    practical: bool = False) -> RStatResult:
    """rSTAT on a precomputed empirical mean of n query values.

    Useful when the sample is summarised by counts. Without ``practical`` the
    call refuses samples below ``config.required_n``.
    """
    if not practical and n < config.required_n:
        raise SampleSizeError(f"sample size {n} < required {config.required_n} for {config}")
    if n < 1:
        raise SampleSizeError("empty sample")
    if not 0.0 <= mean <= 1.0:
        raise ValueError(f"empirical mean {mean} outside [0, 1]")
    if not 0.0 <= offset < config.alpha:
        raise ValueError(f"offset {offset} outside [0, alpha={config.alpha})")
    k = round_to_grid(mean, offset, config.alpha)
    grid_value = offset + k * config.alpha
    value = min(1.0, max(0.0, grid_value))
    return RStatResult(value, mean, offset, k, config.alpha, n, practical)


def rstat(sample, config: RStatConfig, offset_stream: np.random.Generator,
          practical: bool = False) -> RStatResult:
    """Replicable estimate of the mean of ``sample`` (values in [0, 1])."""
    values = np.asarray(sample, dtype=np.float64).ravel()
    if values.size and not np.all((values >= 0.0) & (values <= 1.0)):
        raise ValueError("sample values must lie in [0, 1]")
    n = values.size
    if not practical and n < config.required_n:
        raise SampleSizeError(f"sample size {n} < required {config.required_n} for {config}")
    if n == 0:
        raise SampleSizeError("empty sample")
    # fsum is exact, so the mean depends only on the multiset of values
    mean = min(1.0, math.fsum(values) / n)
    return rstat_from_mean(mean, n, config, draw_offset(config, offset_stream), practical)


def apply_query(sample: Iterable, phi: Callable) -> np.ndarray:
    """Apply a statistical query elementwise; outputs must lie in [0, 1]."""
    out = np.array([phi(x) for x in sample], dtype=np.float64)
    bad = np.flatnonzero(~((out >= 0.0) & (out <= 1.0)))
    if bad.size:
        raise ValueError(f"query output outside [0, 1] at positions {bad[:10].tolist()}")
    return out


def indicator(target) -> Callable:
    """phi(x) = 1[x == target]."""
    return lambda x: 1.0 if x == target else 0.0
