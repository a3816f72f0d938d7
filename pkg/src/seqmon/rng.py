"""Counter-based random streams for reproducible Monte-Carlo work.

Every replication owns a SplitMix64 stream keyed by
``mix64(seed ^ mix64(rep_index + GOLDEN))``. Draw ``j`` of that stream is
``mix64(key + (j + 1) * GOLDEN)``, so any draw of any replication can be
computed directly, in any order and in any chunking, with identical
results on every platform. Uniforms take the top 53 bits and are offset
by half an ulp so they never hit 0 or 1.
"""

from __future__ import annotations

import numpy as np
from scipy import special

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK64 = 0xFFFFFFFFFFFFFFFF


def mix64(z):
    """SplitMix64 finalizer (Stafford variant 13); bijective on 64-bit words."""
    scalar = np.ndim(z) == 0
    z = np.atleast_1d(np.asarray(z, dtype=np.uint64)).copy()
    with np.errstate(over="ignore"):
        z ^= z >> np.uint64(30)
        z *= _M1
        z ^= z >> np.uint64(27)
        z *= _M2
        z ^= z >> np.uint64(31)
    return z[0] if scalar else z


def substream_keys(seed: int, rep_indices) -> np.ndarray:
    reps = np.atleast_1d(np.asarray(rep_indices, dtype=np.uint64))
    with np.errstate(over="ignore"):
        return mix64(np.uint64(int(seed) & _MASK64) ^ mix64(reps + GOLDEN))


def raw_draws(keys: np.ndarray, start: int, count: int) -> np.ndarray:
    """64-bit words ``start .. start+count-1`` of each stream; shape ``(len(keys), count)``."""
    offsets = np.arange(start + 1, start + count + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return mix64(keys[:, None] + offsets[None, :] * GOLDEN)


def uniforms(keys: np.ndarray, start: int, count: int) -> np.ndarray:
    words = raw_draws(keys, start, count)
    return ((words >> np.uint64(11)).astype(np.float64) + 0.5) * (1.0 / 9007199254740992.0)


def normals(keys: np.ndarray, start: int, count: int) -> np.ndarray:
    """Standard normals by inverse-CDF transform of :func:`uniforms`."""
    return special.ndtri(uniforms(keys, start, count))


def gammas(keys: np.ndarray, start: int, count: int, shape: float) -> np.ndarray:
    """Unit-scale gamma variates by inverse CDF (exponential fast path for shape 1)."""
    u = uniforms(keys, start, count)
    if shape == 1.0:
        return -np.log1p(-u)
    return special.gammaincinv(shape, u)


class Stream:
    """Sequential reader over one replication's substream."""

    def __init__(self, seed: int, rep_index: int = 0):
        self.key = substream_keys(seed, [rep_index])
        self.position = 0

    def uniforms(self, count: int) -> np.ndarray:
        out = uniforms(self.key, self.position, count)[0]
        self.position += count
        return out

    def normals(self, count: int) -> np.ndarray:
        return special.ndtri(self.uniforms(count))
