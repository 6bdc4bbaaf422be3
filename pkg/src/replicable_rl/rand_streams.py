"""Keyed, hierarchical randomness.

A :class:`RandTree` is a 256-bit root seed plus a role (``internal`` or
``sample``). Substreams are addressed by a path of ``(label, index)`` pairs and
derived by hashing ``(role, root, path)`` into a Philox key, so any substream
can be regenerated independently of call order or thread schedule.

Paired runs share the internal tree (rSTAT offsets, thresholds, initial
policies) and hold different sample trees (environment draws).
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

INTERNAL = "internal"
SAMPLE = "sample"
_DOMAIN = b"replicable-rl/stream/v1"
_SEED_BITS = 256

PathPair = tuple[str, int]


def parse_seed(seed: int | str) -> int:
    """Accept an int, a decimal string, or a ``0x``-prefixed hex string."""
    if isinstance(seed, (int, np.integer)):
        value = int(seed)
    else:
        text = str(seed).strip().lower()
        value = int(text, 16) if text.startswith("0x") else int(text, 10)
    if not 0 <= value < 2**_SEED_BITS:
        raise ValueError(f"seed must be in [0, 2^256), got {seed!r}")
    return value


def encode_path(path: Sequence[PathPair]) -> bytes:
    """Injective byte encoding of a stream path."""
    out = [struct.pack("<I", len(path))]
    for label, index in path:
        raw = label.encode("utf-8")
        out.append(struct.pack("<H", len(raw)))
        out.append(raw)
        out.append(struct.pack("<q", int(index)))
    return b"".join(out)


@dataclass(frozen=True)
class RandTree:
    root_seed: int
    role: str = SAMPLE

    def __post_init__(self):
        object.__setattr__(self, "root_seed", parse_seed(self.root_seed))
        if self.role not in (INTERNAL, SAMPLE):
            raise ValueError(f"role must be {INTERNAL!r} or {SAMPLE!r}, got {self.role!r}")

    def key(self, *path: PathPair) -> int:
        h = hashlib.sha256()
        h.update(_DOMAIN)
        h.update(self.role.encode())
        h.update(self.root_seed.to_bytes(_SEED_BITS // 8, "little"))
        h.update(encode_path(path))
        return int.from_bytes(h.digest()[:16], "little")

    def derive(self, *path: PathPair) -> np.random.Generator:
        """A fresh generator that depends only on (role, root_seed, path)."""
        return np.random.Generator(np.random.Philox(key=self.key(*path)))


def internal_tree(seed: int | str) -> RandTree:
    return RandTree(seed, INTERNAL)


def sample_tree(seed: int | str) -> RandTree:
    return RandTree(seed, SAMPLE)


def derive(tree: RandTree, path: Sequence[PathPair]) -> np.random.Generator:
    return tree.derive(*path)


# Generator.random() maps the top 53 bits of one 64-bit word to [0, 1).


def uniform(stream: np.random.Generator, lo: float, hi: float) -> float:
    if hi < lo:
        raise ValueError(f"need lo <= hi, got [{lo}, {hi}]")
    u = stream.random()
    return lo if hi == lo else lo + (hi - lo) * u


def uniform_int(stream: np.random.Generator, n: int) -> int:
    if n < 1:
        raise ValueError("n must be >= 1")
    return int(stream.integers(n))


def cumulative(weights) -> np.ndarray:
    """Normalized CDF with a fixed ascending-index summation order.

    Dividing by the total makes the last positive entry exactly 1.0, so a
    uniform in [0, 1) can never fall past it.
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim < 1 or w.shape[-1] == 0 or np.any(~(w >= 0)) or np.any(~np.isfinite(w)):
        raise ValueError("weights must be finite and nonnegative")
    total = w.sum(axis=-1, keepdims=True)
    if np.any(total <= 0):
        raise ValueError("weights must have a positive sum")
    return np.cumsum(w, axis=-1) / total


def inverse_cdf(cdf: np.ndarray, u) -> np.ndarray:
    """Index i with cdf[i-1] <= u < cdf[i]; zero-weight outcomes are never hit."""
    return np.searchsorted(cdf, u, side="right")


def categorical(stream: np.random.Generator, weights) -> int:
    return int(inverse_cdf(cumulative(weights), stream.random()))
