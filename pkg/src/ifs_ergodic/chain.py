"""Reproducible realizations of the chain X_{k+1} = f_{i_{k+1}}(X_k).

Replica ``r`` of a run with seed ``s`` draws from SplitMix64 stream ``(s, r)``:
the generator state starts at ``mix(s ^ (0x9E3779B97F4A7C15 * (r + 1)) mod 2**64)``,
where ``mix`` is the SplitMix64 output function, and each draw advances it by the golden increment, mixes it, and maps the top
53 bits to ``u`` in [0, 1). The symbol is the smallest ``i`` with cumulative
probability ``C_i > u``. Replicas never share state, so splitting them across
threads cannot change any result.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from . import _kernels as K
from .core import IfsSystem, word_states
from .empirical import EmpiricalMeasure
from .errors import InvariantBreach, ValidationError

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
BURN_IN_SALT = 0xB0A7_5EED_0000_0001
STATE_TOL = 1e-12
DEFAULT_N_BURN = 1_000
BLOCK_CELLS = 1 << 21


@dataclass(frozen=True)
class StreamSpec:
    seed: int
    stream_index: int = 0

    def __post_init__(self):
        for v in (self.seed, self.stream_index):
            if not 0 <= int(v) <= MASK64:
                raise ValidationError("seed and stream index must be unsigned 64-bit integers")


@dataclass(frozen=True)
class Trajectory:
    x0: float
    symbols: np.ndarray
    states: np.ndarray

    @property
    def n(self) -> int:
        return self.states.size

    def rows(self):
        yield ("step", "symbol", "state")
        yield (0, "", repr(float(self.x0)))
        for k, (s, x) in enumerate(zip(self.symbols, self.states), start=1):
            yield (k, int(s), repr(float(x)))


def derive_seed(seed: int, salt: int) -> int:
    """An unrelated seed for an auxiliary run (burn-in, centering), fixed by ``seed``."""
    z = ((seed ^ salt) + GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def rng_states(seed: int, streams) -> np.ndarray:
    streams = np.ascontiguousarray(streams, dtype=np.uint64)
    out = np.empty(streams.size, dtype=np.uint64)
    K.stream_states(np.uint64(int(seed) & MASK64), streams, out)
    return out


def uniforms(stream: StreamSpec, n: int) -> np.ndarray:
    """The first ``n`` uniforms of a stream."""
    rng = rng_states(stream.seed, [stream.stream_index])
    out = np.empty((int(n), 1))
    K.draw_uniforms(rng, out)
    return out[:, 0]


def _chunks(R: int, threads: int) -> list[slice]:
    threads = max(1, min(int(threads), R))
    edges = np.linspace(0, R, threads + 1).astype(int)
    return [slice(a, b) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def _parallel(fn, R: int, threads: int):
    parts = _chunks(R, threads)
    if len(parts) == 1:
        fn(parts[0])
        return
    with ThreadPoolExecutor(len(parts)) as ex:
        for f in [ex.submit(fn, p) for p in parts]:
            f.result()


def _check_states(x: np.ndarray):
    if x.size and (x.min() < -STATE_TOL or x.max() > 1.0 + STATE_TOL):
        raise InvariantBreach("chain state left [0, 1]")


def _starts(starts, R: int) -> np.ndarray:
    x = np.array(np.broadcast_to(np.asarray(starts, dtype=float), (R,)), dtype=float)
    if not (np.all(x >= 0.0) and np.all(x <= 1.0)):
        raise ValidationError("start points must lie in [0, 1]")
    return x


def _streams(R: int, streams) -> np.ndarray:
    if streams is None:
        return np.arange(R, dtype=np.uint64)
    s = np.ascontiguousarray(streams, dtype=np.uint64)
    if s.size != R:
        raise ValidationError("need one stream index per replica")
    return s


def sample_symbols(system: IfsSystem, n: int, stream: StreamSpec) -> np.ndarray:
    """An i.i.d. word of length ``n`` (1-based symbols)."""
    if n < 0:
        raise ValidationError("n must be >= 0")
    rng = rng_states(stream.seed, [stream.stream_index])
    out = np.empty((int(n), 1), dtype=np.int64)
    K.draw_symbols(rng, system.packed[4], out)
    return out[:, 0] + 1


def iter_blocks(
    system: IfsSystem,
    starts,
    n: int,
    seed: int,
    streams=None,
    *,
    R: int | None = None,
    threads: int = 1,
    breaks: Sequence[int] = (),
    block_cells: int = BLOCK_CELLS,
) -> Iterator[tuple[int, np.ndarray, np.ndarray]]:
    """Run replicas for ``n`` steps, yielding ``(last_step, states, symbols)`` blocks.

    ``states[j, r]`` is X at step ``last_step - T + 1 + j`` of replica ``r``
    (time-major); symbols are 0-based. No block straddles a step in ``breaks``.
    """
    if R is None:
        R = np.size(starts) if streams is None else np.size(streams)
    x = _starts(starts, R)
    rng = rng_states(seed, _streams(R, streams))
    xs, ys, sl, off, cum = system.packed
    T = max(1, min(int(n), block_cells // max(R, 1)))
    cuts = sorted({int(b) for b in breaks if 0 < b < n} | {int(n)})
    done = 0
    for cut in cuts:
        while done < cut:
            t = min(T, cut - done)
            bx = np.empty((t, R))
            bs = np.empty((t, R), dtype=np.int16)

            def work(p, bx=bx, bs=bs):
                K.advance_block(x[p], rng[p], xs, ys, sl, off, cum, bx[:, p], bs[:, p])

            _parallel(work, R, threads)
            _check_states(x)
            done += t
            yield done, bx, bs


def terminal_states(system: IfsSystem, starts, n: int, seed: int, streams=None, *, R=None, threads: int = 1) -> np.ndarray:
    """X_n for each replica, without storing the path."""
    if R is None:
        R = np.size(starts) if streams is None else np.size(streams)
    x = _starts(starts, R)
    rng = rng_states(seed, _streams(R, streams))
    xs, ys, sl, off, cum = system.packed

    def work(p):
        K.advance_silent(x[p], rng[p], xs, ys, sl, off, cum, int(n))

    _parallel(work, R, threads)
    _check_states(x)
    return x


def run_trajectory(system: IfsSystem, x0: float, n: int, stream: StreamSpec) -> Trajectory:
    states = np.empty(int(n))
    symbols = np.empty(int(n), dtype=np.int64)
    for end, bx, bs in iter_blocks(system, [x0], n, stream.seed, [stream.stream_index]):
        states[end - bx.shape[0] : end] = bx[:, 0]
        symbols[end - bx.shape[0] : end] = bs[:, 0]
    return Trajectory(float(x0), symbols + 1, states)


def run_forced(system: IfsSystem, x0: float, word) -> Trajectory:
    """Trajectory along a given word instead of a random one."""
    word = np.asarray(word, dtype=np.int64)
    return Trajectory(float(x0), word, word_states(system, word, x0))


def run_coupled_pair(system: IfsSystem, x0: float, y0: float, n: int, stream: StreamSpec) -> tuple[Trajectory, Trajectory]:
    """Two trajectories driven by the same word (synchronous coupling)."""
    word = sample_symbols(system, n, stream)
    return run_forced(system, x0, word), run_forced(system, y0, word)


def burn_in_states(system: IfsSystem, n_burn: int, R: int, seed: int, *, threads: int = 1) -> np.ndarray:
    """Terminal states of ``R`` trajectories from 1/2, in replica order."""
    if n_burn < 0:
        raise ValidationError("n_burn must be >= 0")
    return terminal_states(system, 0.5, n_burn, seed, R=R, threads=threads)


def burn_in_sample(system: IfsSystem, n_burn: int, R: int, seed: int, *, threads: int = 1) -> EmpiricalMeasure:
    """Equal-weight sample approximating the invariant measure on (0, 1)."""
    return EmpiricalMeasure(burn_in_states(system, n_burn, R, seed, threads=threads))


def stationary_starts(system: IfsSystem, R: int, seed: int, n_burn: int = DEFAULT_N_BURN, *, threads: int = 1) -> np.ndarray:
    """Start points for a stationary run with ``seed``; the burn-in uses a derived seed."""
    return burn_in_states(system, n_burn, R, derive_seed(seed, BURN_IN_SALT), threads=threads)


def resolve_starts(system, start, R, seed, n_burn=DEFAULT_N_BURN, threads=1) -> np.ndarray:
    if isinstance(start, str):
        if start != "stationary":
            raise ValidationError(f"unknown start {start!r}")
        return stationary_starts(system, R, seed, n_burn, threads=threads)
    return _starts(start, R)


def run_ensemble(system: IfsSystem, starts, n: int, R: int, seed: int, *, threads: int = 1, n_burn: int = DEFAULT_N_BURN) -> list[Trajectory]:
    """``R`` full trajectories; replica ``r`` uses stream index ``r``."""
    if R < 1:
        raise ValidationError("R must be >= 1")
    x0 = resolve_starts(system, starts, R, seed, n_burn, threads)
    states = np.empty((R, int(n)))
    symbols = np.empty((R, int(n)), dtype=np.int64)
    for end, bx, bs in iter_blocks(system, x0, n, seed, threads=threads):
        states[:, end - bx.shape[0] : end] = bx.T
        symbols[:, end - bx.shape[0] : end] = bs.T
    return [Trajectory(float(x0[r]), symbols[r] + 1, states[r]) for r in range(R)]
