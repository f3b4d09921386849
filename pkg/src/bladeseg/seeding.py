"""SplitMix64 mixing used for all per-sample / per-triangle seeds.

Scalar versions operate on Python ints; the array version on uint64 numpy
arrays (numpy wraps uint64 multiplication modulo 2**64).
"""

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB


def splitmix64(x: int) -> int:
    z = (x + GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def derive_seed(master_seed: int, *keys: int) -> int:
    """Fold integer keys into ``master_seed``; order-sensitive, pure."""
    h = splitmix64(master_seed & MASK64)
    for k in keys:
        h = splitmix64(h ^ (k & MASK64))
    return h


def splitmix64_array(x: np.ndarray) -> np.ndarray:
    z = np.asarray(x, dtype=np.uint64) + np.uint64(GOLDEN)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


def unit_floats(seed: int, keys: np.ndarray) -> np.ndarray:
    """Deterministic floats in [0, 1) for each integer key."""
    base = np.uint64(splitmix64(seed & MASK64))
    h = splitmix64_array(np.asarray(keys, dtype=np.uint64) ^ base)
    return (h >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))


def rng_for(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed & MASK64)
