"""Counter-based 64-bit hashing used for every random draw in the package.

A draw is a pure function of (key, counter), so any stream can be evaluated
at an arbitrary position without advancing state.
"""

import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0


@njit(cache=True, inline="always")
def mix64(x):
    """splitmix64 finalizer."""
    z = x + _GOLDEN
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True, inline="always")
def combine(key, value):
    # value may be a negative site index; reinterpret as two's complement
    return mix64(key ^ mix64(np.uint64(value)))


@njit(cache=True, inline="always")
def uniform(key, counter):
    """Uniform double in [0, 1) with 53 random bits."""
    return float(combine(key, counter) >> _S11) * _INV53


@njit(cache=True, inline="always")
def exponential(key, counter, rate):
    return -np.log1p(-uniform(key, counter)) / rate


@njit(cache=True)
def uniform_array(key, counters):
    out = np.empty(counters.shape[0], dtype=np.float64)
    for i in range(counters.shape[0]):
        out[i] = uniform(key, counters[i])
    return out


@njit(cache=True)
def _combine_scalar(key, value):
    return combine(key, value)


def combine_scalar(key, value) -> np.uint64:
    # numba hands uint64 back as a Python int; keep the numpy type so the
    # value re-enters compiled code as uint64
    return np.uint64(_combine_scalar(np.uint64(key), np.int64(value)))
