"""Counter-based random number generation for the hot kernels.

Every draw is a pure function of a 64-bit stream id and an integer counter
(splitmix64 output function).  Random access to draw positions means any
worker can evaluate any draw without sequencing, which is what makes serial
runs, multi-worker runs, and the two kernel backends produce identical
streams.  Stream ids are derived by mixing a master seed with integer
coordinates such as (seed node, replicate index).

Randomness that lives outside the kernels (probability assignment, portion
sampling, weight initialisation, shuffles) uses numpy Generators instead.
"""

import numpy as np

from ._accel import hot

U64 = np.uint64
MASK64 = (1 << 64) - 1

_GOLDEN = U64(0x9E3779B97F4A7C15)
_MIX_A = U64(0xBF58476D1CE4E5B9)
_MIX_B = U64(0x94D049BB133111EB)
_INV_2_53 = 1.0 / 9007199254740992.0  # 2**-53


def as_seed(value) -> np.uint64:
    """Clamp an arbitrary Python integer into a uint64 seed."""
    return U64(int(value) & MASK64)


@hot(cache=True, nogil=True)
def mix64(z):
    """splitmix64 finalizer; bijective on uint64."""
    z = (z ^ (z >> U64(30))) * _MIX_A
    z = (z ^ (z >> U64(27))) * _MIX_B
    return z ^ (z >> U64(31))


@hot(cache=True, nogil=True)
def stream64(master, a, b):
    """Derive an independent stream id from a master seed and two coordinates."""
    s = mix64(master + _GOLDEN)
    s = mix64(s ^ mix64(U64(a) + _GOLDEN))
    return mix64(s ^ mix64(U64(b) + _GOLDEN))


@hot(cache=True, nogil=True)
def uniform64(stream, counter):
    """Uniform draw in [0, 1) at integer position `counter` of `stream`."""
    z = mix64(stream + (U64(counter) + U64(1)) * _GOLDEN)
    return np.float64(z >> U64(11)) * _INV_2_53


def uniform64_array(stream, counters):
    """Vectorized ``uniform64`` over an array of counter positions."""
    with np.errstate(over="ignore"):
        z = U64(stream) + (counters.astype(np.uint64) + U64(1)) * _GOLDEN
        z = (z ^ (z >> U64(30))) * _MIX_A
        z = (z ^ (z >> U64(27))) * _MIX_B
        z = z ^ (z >> U64(31))
        return (z >> U64(11)).astype(np.float64) * _INV_2_53


def stream64_array(master, a, b):
    """Vectorized ``stream64`` over coordinate arrays (broadcastable)."""
    def _mix(z):
        z = (z ^ (z >> U64(30))) * _MIX_A
        z = (z ^ (z >> U64(27))) * _MIX_B
        return z ^ (z >> U64(31))

    with np.errstate(over="ignore"):
        a = np.asarray(a, dtype=np.uint64)
        b = np.asarray(b, dtype=np.uint64)
        s = _mix(U64(master) + _GOLDEN)
        s = _mix(s ^ _mix(a + _GOLDEN))
        return _mix(s ^ _mix(b + _GOLDEN))


def derive_master(master: int, *coords: int) -> int:
    """Mix integer coordinates into a master seed, yielding a new master.

    Pure-Python companion to ``stream64`` for deriving stage-level seeds
    (e.g. one seed per experiment cell) outside the kernels.
    """
    s = _mix_int(master & MASK64)
    for c in coords:
        s = _mix_int((s ^ _mix_int((c + 0x9E3779B97F4A7C15) & MASK64)) & MASK64)
    return s


def _mix_int(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return (z ^ (z >> 31)) & MASK64
