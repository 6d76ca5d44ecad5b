"""Counter-based pseudo-randomness.

Every random quantity in the package is a pure function of
``(master seed, stream label, index)``, realized with the splitmix64
finalizer.  This gives splittable, replayable streams with no stored
tapes: instruction ``j`` of a stream can be recomputed at any time, and
two constructions from the same seed are bit-identical.

Three views of the same function are provided:

* plain-Python integers (reference implementation, used by the public
  ``StackSet.draw`` API),
* vectorized numpy uint64 (bulk statistics in tests),
* numba-compatible scalars (hot kernels; see ``kernels.py``).
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

# Domain salts keep unrelated stream families disjoint even for equal
# (site, orientation) labels.
DOMAIN_INSTRUCTIONS = 0x1357FD4A11
DOMAIN_INIT = 0x2468AC0F37
DOMAIN_IDLA = 0x52A1B3C9D5
DOMAIN_REPLICA = 0x7F3D9E5B01


def mix64(z: int) -> int:
    """splitmix64 finalizer on 64-bit integers."""
    z = (z + GAMMA) & MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return (z ^ (z >> 31)) & MASK64


def stream_key(seed: int, domain: int, site: int, orientation: int) -> int:
    """64-bit key identifying one instruction stream."""
    label = ((site & MASK64) << 3) ^ (orientation + 1)
    return mix64(mix64(seed & MASK64) ^ mix64((label ^ domain) & MASK64))


def stream_value(key: int, index: int) -> int:
    """index-th raw 64-bit output of the stream with the given key."""
    return mix64((key + (index + 1) * GAMMA) & MASK64)


def stream_bit(key: int, index: int) -> int:
    """index-th instruction of a stream as a direction in {-1, +1}."""
    return 1 if stream_value(key, index) >> 63 else -1


def stream_uniform(key: int, index: int) -> float:
    """index-th output mapped to a uniform in [0, 1)."""
    return stream_value(key, index) / 2.0**64


def replica_seed(master_seed: int, replica: int) -> int:
    """Derived seed for an independent replica worker."""
    return stream_key(master_seed, DOMAIN_REPLICA, replica, 0)


# Vectorized twins (numpy uint64 arrays) -------------------------------------

_U = np.uint64
_GAMMA_U = _U(GAMMA)
_MIX1_U = _U(_MIX1)
_MIX2_U = _U(_MIX2)


def mix64_np(z: np.ndarray) -> np.ndarray:
    z = z + _GAMMA_U
    z = (z ^ (z >> _U(30))) * _MIX1_U
    z = (z ^ (z >> _U(27))) * _MIX2_U
    return z ^ (z >> _U(31))


def stream_bits_np(key: int, start: int, count: int) -> np.ndarray:
    """Instructions start..start+count-1 of one stream, as +-1 int8."""
    idx = np.arange(start + 1, start + count + 1, dtype=np.uint64)
    vals = mix64_np(_U(key) + idx * _GAMMA_U)
    return np.where((vals >> _U(63)).astype(np.int8) == 1, 1, -1).astype(np.int8)


def site_uniform(seed: int, site: int, domain: int = DOMAIN_INIT, index: int = 0) -> float:
    """Deterministic uniform attached to a site (initial-condition sampling)."""
    return stream_uniform(stream_key(seed, domain, site, 0), index)
