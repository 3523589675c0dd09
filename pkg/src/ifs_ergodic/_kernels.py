"""Compiled inner loops: piecewise-linear evaluation, SplitMix64, chain stepping.

Every path that evaluates a map (single calls, word application, exact
enumeration, Monte Carlo stepping) goes through ``pl_eval`` so that a forced
word reproduces simulated states bit for bit.

Maps are packed into flat arrays: ``xs``, ``ys``, ``sl`` hold the nodes and
segment slopes of all maps back to back, map ``i`` occupying
``off[i]:off[i + 1]``. ``sl`` has one padding entry per map.
"""

import numpy as np
from numba import njit

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
MIX1 = np.uint64(0xBF58476D1CE4E5B9)
MIX2 = np.uint64(0x94D049BB133111EB)
S30 = np.uint64(30)
S27 = np.uint64(27)
S31 = np.uint64(31)
S11 = np.uint64(11)
ONE = np.uint64(1)
TWO_M53 = 2.0**-53
SCAN_NODES = 16


@njit(cache=True, nogil=True)
def pl_eval_range(xs, ys, sl, a, b, x):
    """Evaluate the map stored in ``xs[a:b]``, ``ys[a:b]``, ``sl[a:b]`` at ``x``."""
    m = b - 1
    if x >= xs[m]:
        return ys[m]
    # lo = last node index in [a, m - 1] with xs[lo] <= x
    lo = a
    if b - a <= SCAN_NODES:
        # branch-free scan; unpredictable branches dominate for small maps
        for j in range(a + 1, m):
            lo += xs[j] <= x
    else:
        hi = m
        while hi - lo > 1:
            mid = (lo + hi) >> 1
            if xs[mid] <= x:
                lo = mid
            else:
                hi = mid
    y = ys[lo] + sl[lo] * (x - xs[lo])
    # rounding must not carry the value past the next node (keeps monotonicity)
    return min(y, ys[lo + 1])


@njit(cache=True, nogil=True)
def pl_eval(xs, ys, sl, x):
    return pl_eval_range(xs, ys, sl, 0, xs.size, x)


@njit(cache=True, nogil=True)
def pl_eval_array(xs, ys, sl, x, out):
    for j in range(x.size):
        out[j] = pl_eval(xs, ys, sl, x[j])


@njit(cache=True, nogil=True)
def mix64(z):
    z = (z ^ (z >> S30)) * MIX1
    z = (z ^ (z >> S27)) * MIX2
    return z ^ (z >> S31)


@njit(cache=True, nogil=True)
def stream_states(seed, streams, out):
    for r in range(streams.size):
        # the raw value puts stream r on stream 0's orbit r steps ahead; the
        # finalizer (a bijection) scatters streams across the cycle
        out[r] = mix64(seed ^ (GOLDEN * (streams[r] + ONE)))


@njit(cache=True, nogil=True)
def _pick(cum, u):
    # smallest i with cum[i] > u; cum is nondecreasing with cum[-1] = 1 > u
    i = 0
    for j in range(cum.size - 1):
        i += cum[j] <= u
    return i


@njit(cache=True, nogil=True)
def draw_uniforms(rng, out):
    """Fill ``out[t, r]`` with the next uniforms of stream ``r``; advances ``rng``."""
    T, R = out.shape
    for t in range(T):
        for r in range(R):
            st = rng[r] + GOLDEN
            out[t, r] = np.float64(mix64(st) >> S11) * TWO_M53
            rng[r] = st


@njit(cache=True, nogil=True)
def draw_symbols(rng, cum, out):
    T, R = out.shape
    for t in range(T):
        for r in range(R):
            st = rng[r] + GOLDEN
            out[t, r] = _pick(cum, np.float64(mix64(st) >> S11) * TWO_M53)
            rng[r] = st


# Replicas form the inner loop: their dependency chains are independent, so
# consecutive iterations overlap in the pipeline.


@njit(cache=True, nogil=True)
def advance_block(x, rng, xs, ys, sl, off, cum, out_x, out_sym):
    """Advance every replica ``out_x.shape[0]`` steps; ``out_x[t, r]`` is replica r after step t+1."""
    T, R = out_x.shape
    for t in range(T):
        for r in range(R):
            st = rng[r] + GOLDEN
            i = _pick(cum, np.float64(mix64(st) >> S11) * TWO_M53)
            xr = pl_eval_range(xs, ys, sl, off[i], off[i + 1], x[r])
            x[r] = xr
            rng[r] = st
            out_x[t, r] = xr
            out_sym[t, r] = i


@njit(cache=True, nogil=True)
def advance_silent(x, rng, xs, ys, sl, off, cum, steps):
    """Advance every replica ``steps`` steps keeping only the final state."""
    R = x.size
    for _ in range(steps):
        for r in range(R):
            st = rng[r] + GOLDEN
            i = _pick(cum, np.float64(mix64(st) >> S11) * TWO_M53)
            x[r] = pl_eval_range(xs, ys, sl, off[i], off[i + 1], x[r])
            rng[r] = st


@njit(cache=True, nogil=True)
def apply_word(xs, ys, sl, off, word, x, out):
    """States along a 0-based ``word`` from ``x``; ``out[k]`` is the state after k+1 symbols."""
    for k in range(word.size):
        i = word[k]
        x = pl_eval_range(xs, ys, sl, off[i], off[i + 1], x)
        out[k] = x


@njit(cache=True, nogil=True)
def row_accumulate(acc, block):
    """``acc[r] += block[0, r]; acc[r] += block[1, r]; ...`` in that order."""
    T, R = block.shape
    for t in range(T):
        for r in range(R):
            acc[r] += block[t, r]
