"""Counter-based random numbers (Philox4x32-10).

Every draw is a pure function of ``(key, counter)``, so a path's noise at a
given step does not depend on how many other paths exist, on the order in
which they are processed, or on the number of worker threads.  The path
engine keys streams by ``(master_seed, path id, step index)``.

One Philox block yields two 53-bit uniforms; steps ``2j`` and ``2j + 1`` of
a stream share block ``j``.  Normals come from inverting the normal CDF
(Wichura's AS241), which is cheaper here than Box-Muller's log/sqrt/cos.
"""

import numba as nb
import numpy as np

_MASK32 = np.uint64(0xFFFFFFFF)
_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_SHIFT32 = np.uint64(32)
_ONE = np.uint64(1)
_INV_2_53 = 1.0 / 9007199254740992.0

# Counter slot reserved for initial-position sampling; no lockstep step uses it.
INIT_STEP = np.uint64(0xFFFFFFFFFFFFFFFF)


@nb.njit(cache=True, inline="always")
def philox4x32(c0, c1, c2, c3, k0, k1):
    """Ten Philox rounds over a 128-bit counter and a 64-bit key.

    All arguments are ``uint64`` holding 32-bit words; returns four words.
    """
    for r in range(10):
        if r > 0:
            k0 = (k0 + _W0) & _MASK32
            k1 = (k1 + _W1) & _MASK32
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0 = p0 >> _SHIFT32
        lo0 = p0 & _MASK32
        hi1 = p1 >> _SHIFT32
        lo1 = p1 & _MASK32
        c0 = hi1 ^ c1 ^ k0
        c1 = lo1
        c2 = hi0 ^ c3 ^ k1
        c3 = lo0
    return c0, c1, c2, c3


@nb.njit(cache=True, inline="always")
def _poly(r, c0, c1, c2, c3, c4, c5, c6, c7):
    return ((((((c7 * r + c6) * r + c5) * r + c4) * r + c3) * r + c2) * r + c1) * r + c0


@nb.njit(cache=True)
def norm_ppf(p):
    """Inverse standard normal CDF for ``0 < p < 1`` (AS241, ~1e-16 relative)."""
    q = p - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        return q * _poly(r, 3.387132872796366608, 133.14166789178437745, 1971.5909503065514427,
                         13731.693765509461125, 45921.953931549871457, 67265.770927008700853,
                         33430.575583588128105, 2509.0809287301226727) / \
            _poly(r, 1.0, 42.313330701600911252, 687.1870074920579083, 5394.1960214247511077,
                  21213.794301586595867, 39307.89580009271061, 28729.085735721942674,
                  5226.495278852545925)
    r = p if q < 0 else 1.0 - p
    r = np.sqrt(-np.log(r))
    if r <= 5.0:
        r -= 1.6
        z = _poly(r, 1.42343711074968357734, 4.6303378461565452959, 5.7694972214606914055,
                  3.64784832476320460504, 1.27045825245236838258, 0.24178072517745061177,
                  0.0227238449892691845833, 7.7454501427834140764e-4) / \
            _poly(r, 1.0, 2.05319162663775882187, 1.6763848301838038494, 0.68976733498510000455,
                  0.14810397642748007459, 0.0151986665636164571966, 5.475938084995344946e-4,
                  1.05075007164441684324e-9)
    else:
        r -= 5.0
        z = _poly(r, 6.6579046435011037772, 5.4637849111641143699, 1.7848265399172913358,
                  0.29656057182850489123, 0.026532189526576123093, 0.0012426609473880784386,
                  2.71155556874348757815e-5, 2.01033439929228813265e-7) / \
            _poly(r, 1.0, 0.59983220655588793769, 0.13692988092273580531,
                  0.0148753612908506148525, 7.868691311456132591e-4, 1.8463183175100546818e-5,
                  1.4215117583164458887e-7, 2.04426310338993978564e-15)
    return -z if q < 0 else z


@nb.njit(cache=True, inline="always")
def stream_uniform(seed, pid, step):
    """Uniform in (0, 1) with 53 random bits for stream ``pid`` at ``step``."""
    block = step >> _ONE
    r0, r1, r2, r3 = philox4x32(
        block & _MASK32, block >> _SHIFT32, pid & _MASK32, pid >> _SHIFT32,
        seed & _MASK32, seed >> _SHIFT32,
    )
    if step & _ONE:
        r0 = r2
        r1 = r3
    return (float(r0 >> np.uint64(5)) * 67108864.0 + float(r1 >> np.uint64(6)) + 0.5) * _INV_2_53


@nb.njit(cache=True, inline="always")
def stream_normal(seed, pid, step):
    """Standard normal deviate for stream ``pid`` at counter ``step`` (all ``uint64``)."""
    return norm_ppf(stream_uniform(seed, pid, step))


@nb.njit(cache=True)
def _philox_block(counters, key):
    n = counters.shape[0]
    out = np.empty((n, 4), dtype=np.uint64)
    for i in range(n):
        r = philox4x32(counters[i, 0], counters[i, 1], counters[i, 2], counters[i, 3],
                       key[0], key[1])
        out[i, 0] = r[0]
        out[i, 1] = r[1]
        out[i, 2] = r[2]
        out[i, 3] = r[3]
    return out


@nb.njit(cache=True)
def _normals(seed, pids, step):
    out = np.empty(pids.shape[0])
    for i in range(pids.shape[0]):
        out[i] = stream_normal(seed, pids[i], step)
    return out


@nb.njit(cache=True)
def _uniforms(seed, pids, step):
    out = np.empty(pids.shape[0])
    for i in range(pids.shape[0]):
        out[i] = stream_uniform(seed, pids[i], step)
    return out


@nb.njit(cache=True)
def _ppf_array(p):
    out = np.empty(p.shape[0])
    for i in range(p.shape[0]):
        out[i] = norm_ppf(p[i])
    return out


def philox_block(counters, key):
    """Raw Philox4x32-10 output for an ``(n, 4)`` array of 32-bit counter words."""
    counters = np.ascontiguousarray(counters, dtype=np.uint64)
    key = np.ascontiguousarray(key, dtype=np.uint64)
    if counters.ndim != 2 or counters.shape[1] != 4 or key.shape != (2,):
        raise ValueError("counters must be (n, 4) and key must have 2 words")
    if np.any(counters > _MASK32) or np.any(key > _MASK32):
        raise ValueError("counter and key words must fit in 32 bits")
    return _philox_block(counters, key)


def normals(seed, pids, step):
    """Standard normals for streams ``pids`` at counter ``step`` (vectorized)."""
    pids = np.ascontiguousarray(pids, dtype=np.uint64)
    return _normals(np.uint64(seed), pids, np.uint64(step))


def uniforms(seed, pids, step):
    pids = np.ascontiguousarray(pids, dtype=np.uint64)
    return _uniforms(np.uint64(seed), pids, np.uint64(step))


def inverse_normal_cdf(p):
    """Vectorized AS241 inverse normal CDF."""
    return _ppf_array(np.ascontiguousarray(p, dtype=float))
