"""Counter-based random numbers.

Every draw is a pure function of ``(seed, key, counter)`` via the splitmix64
finaliser, so a ray's jitter does not depend on which batch or thread
rendered it.
"""

from __future__ import annotations

import zlib

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def hash_u64(*keys) -> np.ndarray:
    """Hash a sequence of integer keys (scalars or broadcastable arrays) to uint64."""
    with np.errstate(over="ignore"):
        h = np.zeros((), dtype=np.uint64)
        for k in keys:
            k = np.asarray(k)
            if k.dtype != np.uint64:
                k = (k.astype(np.int64) if k.dtype.kind in "iub" else k).astype(np.uint64)
            h = _mix(h + _GOLDEN + k)
    return h


def uniform(seed: int, ids, n: int) -> np.ndarray:
    """(len(ids), n) floats in [0, 1), one independent stream per id."""
    ids = np.asarray(ids, dtype=np.uint64).reshape(-1, 1)
    ctr = np.arange(n, dtype=np.uint64).reshape(1, -1)
    bits = hash_u64(np.uint64(seed & 0xFFFFFFFFFFFFFFFF), ids, ctr)
    return (bits >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))


def derive_seed(seed: int, *tags) -> int:
    """Stable sub-seed from a base seed and string/int tags."""
    keys = [seed & 0xFFFFFFFFFFFFFFFF]
    for t in tags:
        keys.append(zlib.crc32(t.encode()) if isinstance(t, str) else int(t) & 0xFFFFFFFFFFFFFFFF)
    return int(hash_u64(*[np.uint64(k) for k in keys]))
