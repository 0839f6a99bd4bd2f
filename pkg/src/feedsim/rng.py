"""Counter-based random streams.

Every random quantity in a simulation is a pure function of
``(seed, user_id, stream, counter)``.  Users can therefore be simulated in
any order, in any number of chunks, on any number of threads, and the panel
comes out bit-identical.  The generator is the splitmix64 finaliser applied to
a keyed counter; it is fast, passes the usual sanity checks and is easy to
write identically in numba and in numpy.

The scalar functions below are numba kernels.  The ``*_array`` functions are
their vectorised numpy twins and must stay arithmetically identical.
"""
import math

import numpy as np

from ._accel import jit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_STREAM = np.uint64(0xD1B54A32D192ED03)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0

# streams used by the simulator, offset by 16 * period
STREAM_ARM = 1
STREAM_TASTE = 2
STREAM_TASTE_MIX = 3
STREAM_HALF1 = 4
STREAM_HALF2 = 5
STREAM_SHOCK = 6
STREAM_SHARES = 7
STREAM_DAILY_Q = 8
STREAM_ATTRITION = 9

# inversion is used below this expected count of the minority outcome
BINOMIAL_INVERSION_LIMIT = 200.0


@jit
def _mix(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@jit
def stream_key(seed, user, stream):
    """Key for one user's stream; all arguments are non-negative integers."""
    k = _mix(np.uint64(seed) * _GOLDEN + np.uint64(user))
    return _mix(k + np.uint64(stream) * _STREAM)


@jit
def uniform(key, counter):
    """Uniform draw on the open interval (0, 1)."""
    bits = _mix(key + np.uint64(counter) * _GOLDEN) >> _S11
    return (float(bits) + 0.5) * _INV53


@jit
def normal(key, counter):
    """Standard normal (Box-Muller, cosine branch) from counters 2c and 2c+1."""
    u1 = uniform(key, 2 * counter)
    u2 = uniform(key, 2 * counter + 1)
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


@jit
def binomial(n, p, key):
    """Binomial(n, p) draw.

    Exact inversion when the expected count of the rarer outcome is below
    ``BINOMIAL_INVERSION_LIMIT``; otherwise a continuity-corrected normal
    approximation, whose error is far below the sampling noise at those sizes.
    """
    if n <= 0 or p <= 0.0:
        return 0
    if p >= 1.0:
        return n
    flip = p > 0.5
    pp = 1.0 - p if flip else p
    if n * pp < BINOMIAL_INVERSION_LIMIT:
        u = uniform(key, 0)
        ratio = pp / (1.0 - pp)
        f = math.exp(n * math.log1p(-pp))
        cdf = f
        k = 0
        while u > cdf and k < n:
            f *= ratio * (n - k) / (k + 1)
            k += 1
            cdf += f
    else:
        z = normal(key, 1)
        x = math.floor(n * pp + z * math.sqrt(n * pp * (1.0 - pp)) + 0.5)
        k = int(min(max(x, 0.0), float(n)))
    return n - k if flip else k


# ---------------------------------------------------------------------------
# numpy twins


def _mix_array(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def stream_key_array(seed, users, stream):
    users = np.asarray(users, dtype=np.uint64)
    with np.errstate(over="ignore"):
        k = _mix_array(np.uint64(seed) * _GOLDEN + users)
        return _mix_array(k + np.uint64(stream) * _STREAM)


def uniform_array(keys, counter):
    counter = np.asarray(counter, dtype=np.uint64)
    with np.errstate(over="ignore"):
        bits = _mix_array(keys + counter * _GOLDEN) >> _S11
    return (bits.astype(np.float64) + 0.5) * _INV53


def normal_array(keys, counter):
    counter = np.asarray(counter, dtype=np.uint64)
    u1 = uniform_array(keys, np.uint64(2) * counter)
    u2 = uniform_array(keys, np.uint64(2) * counter + np.uint64(1))
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def binomial_array(n, p, keys):
    """Vectorised :func:`binomial` with the same arithmetic per element."""
    n = np.asarray(n, dtype=np.int64)
    p = np.asarray(p, dtype=np.float64)
    n, p, keys = np.broadcast_arrays(n, p, keys)
    out = np.zeros(n.shape, dtype=np.int64)
    full = (p >= 1.0) & (n > 0)
    out[full] = n[full]
    live = (n > 0) & (p > 0.0) & (p < 1.0)
    flip = p > 0.5
    pp = np.where(flip, 1.0 - p, p)
    small = live & (n * pp < BINOMIAL_INVERSION_LIMIT)
    large = live & ~small

    if large.any():
        nl, pl = n[large], pp[large]
        z = normal_array(keys[large], 1)
        x = np.floor(nl * pl + z * np.sqrt(nl * pl * (1.0 - pl)) + 0.5)
        out[large] = np.minimum(np.maximum(x, 0.0), nl.astype(np.float64)).astype(np.int64)

    if small.any():
        idx = np.flatnonzero(small)
        ns, ps = n[idx], pp[idx]
        u = uniform_array(keys[idx], 0)
        ratio = ps / (1.0 - ps)
        f = np.exp(ns * np.log1p(-ps))
        cdf = f.copy()
        k = np.zeros(idx.size, dtype=np.int64)
        active = (u > cdf) & (k < ns)
        while active.any():
            a = np.flatnonzero(active)
            f[a] *= ratio[a] * (ns[a] - k[a]) / (k[a] + 1)
            k[a] += 1
            cdf[a] += f[a]
            active[a] = (u[a] > cdf[a]) & (k[a] < ns[a])
        out[idx] = k
    return np.where(flip & live, n - out, out)
