"""Counter-based random streams keyed by (seed, replica, step, channel).

Every draw is a pure function of its key, so any subset of replicas can be
simulated independently (on any worker, in any order) and reproduce exactly
the numbers a serial run would use. Bits come from the SplitMix64 finaliser
applied to a hashed counter; normals use the inverse normal CDF.
"""
from __future__ import annotations

import numpy as np
from scipy.special import ndtri

CHANNEL_BATCH = 1
CHANNEL_NOISE = 2
CHANNEL_DATA = 3

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30, _S27, _S31 = np.uint64(30), np.uint64(27), np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0


def mix64(z):
    """SplitMix64 finaliser on uint64 scalars or arrays (wrapping arithmetic)."""
    z = np.asarray(z, dtype=np.uint64)
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def _key(seed: int, step: int, channel: int) -> np.uint64:
    with np.errstate(over="ignore"):
        k = mix64(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) ^ mix64(np.uint64(channel)))
        return mix64(k + _GOLDEN * np.uint64(step + 1))


def raw_bits(seed: int, replicas: np.ndarray, step: int, channel: int, width: int) -> np.ndarray:
    """uint64 array of shape (len(replicas), width)."""
    reps = np.asarray(replicas, dtype=np.uint64)
    with np.errstate(over="ignore"):
        k = _key(seed, step, channel)
        h = mix64(k ^ mix64(reps + _GOLDEN))
        lanes = (np.arange(1, width + 1, dtype=np.uint64) * _GOLDEN)
        return mix64(h[:, None] + lanes[None, :])


def uniforms(seed, replicas, step, channel, width) -> np.ndarray:
    """Uniforms in the open interval (0, 1)."""
    bits = raw_bits(seed, replicas, step, channel, width)
    return ((bits >> _S11).astype(np.float64) + 0.5) * _INV53


def normals(seed, replicas, step, channel, width) -> np.ndarray:
    return ndtri(uniforms(seed, replicas, step, channel, width))


def integers(seed, replicas, step, channel, width, upper: int) -> np.ndarray:
    """Uniform integers in [0, upper)."""
    u = uniforms(seed, replicas, step, channel, width)
    return np.minimum((u * upper).astype(np.int64), upper - 1)
