"""Counter-based seeding: every trial gets its own generator derived from (master seed, trial index)."""
from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """One round of the SplitMix64 finalizer (Steele, Lea, Flood)."""
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def mix(*values: int) -> int:
    """Fold integers into one 64-bit hash with repeated splitmix64 rounds."""
    h = 0
    for v in values:
        h = splitmix64(h ^ (int(v) & MASK64))
    return h


def trial_seed(master: int, index: int) -> int:
    return mix(master, index)


def trial_rng(master: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=trial_seed(master, index)))


def uniform01(*values: int) -> float:
    """Deterministic uniform in [0, 1) keyed by the given integers."""
    return (mix(*values) >> 11) * (1.0 / (1 << 53))


# vectorised counterparts (uint64 arithmetic wraps modulo 2^64, matching the scalar versions)

_U = np.uint64


def splitmix64_np(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = x.astype(np.uint64) + _U(0x9E3779B97F4A7C15)
        z = (z ^ (z >> _U(30))) * _U(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> _U(27))) * _U(0x94D049BB133111EB)
        return z ^ (z >> _U(31))


def mix_np(*values) -> np.ndarray:
    """Elementwise ``mix``; arguments may be ints or uint64 arrays (broadcast)."""
    h = _U(0)
    for v in values:
        v = np.asarray(v)
        if v.dtype != np.uint64:
            v = (v.astype(object) & MASK64).astype(np.uint64) if v.dtype == object else v.astype(np.int64).astype(np.uint64)
        h = splitmix64_np(np.bitwise_xor(h, v))
    return np.asarray(h, dtype=np.uint64)


def uniform01_np(*values) -> np.ndarray:
    return (mix_np(*values) >> _U(11)).astype(np.float64) * (1.0 / (1 << 53))
