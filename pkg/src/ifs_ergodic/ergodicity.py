"""Diagnostics for uniqueness, stability and synchronization on (0, 1)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import _kernels as K
from . import chain
from .chain import StreamSpec
from .core import DEFAULT_BUDGET, IfsSystem, as_values, dual_apply_ladder, enumerate_layers, fits_budget, markov_step_atoms
from .empirical import EmpiricalMeasure, wasserstein1
from .errors import ValidationError
from .measures import resolve_mode

DEFAULT_R = 100_000
REFERENCE_SALT = 0x5EF0_0000_0000_0002
ATOM_WIDTH = 1e-9
ATOM_MASS_LIMIT = 0.01


def _mean_se(v: np.ndarray) -> tuple[float, float]:
    v = np.asarray(v, dtype=float)
    if v.size < 2:
        return float(v.mean()), 0.0
    return math.fsum(v) / v.size, float(v.std(ddof=1) / math.sqrt(v.size))


def _interior(x, name="x"):
    x = float(x)
    if not 0.0 < x < 1.0:
        raise ValidationError(f"{name} must lie in (0, 1), got {x!r}")
    return x


@dataclass(frozen=True)
class Estimate:
    value: float
    stderr: float
    mode: str


def birkhoff_averages(system: IfsSystem, phi: Callable, x, n: int, R: int, seed: int, *, threads: int = 1) -> np.ndarray:
    """Time averages ``(1/n) sum_{k=1..n} phi(X_k)`` for replicas 0..R-1."""
    if n < 1:
        raise ValidationError("n must be >= 1")
    acc = np.zeros(R)
    for _, bx, _ in chain.iter_blocks(system, x, n, seed, R=R, threads=threads):
        K.row_accumulate(acc, as_values(phi, bx))
    return acc / n


def birkhoff_average(system: IfsSystem, phi: Callable, x: float, n: int, stream: StreamSpec) -> float:
    acc = np.zeros(1)
    for _, bx, _ in chain.iter_blocks(system, [x], n, stream.seed, [stream.stream_index]):
        K.row_accumulate(acc, as_values(phi, bx))
    return float(acc[0] / n)


def stability_gap(
    system: IfsSystem,
    x: float,
    y: float,
    n: int,
    mode: str = "auto",
    *,
    R: int = DEFAULT_R,
    seed: int = 0,
    budget: int = DEFAULT_BUDGET,
    threads: int = 1,
) -> Estimate:
    """W1(P^n delta_x, P^n delta_y); Monte Carlo gives the coupling upper bound E|X_n - Y_n|."""
    x, y = _interior(x), _interior(y, "y")
    m = resolve_mode(system, n, mode, budget)
    if m == "exact":
        mx, my = EmpiricalMeasure.dirac(x), EmpiricalMeasure.dirac(y)
        for _ in range(n):
            mx, my = markov_step_atoms(system, mx), markov_step_atoms(system, my)
        return Estimate(wasserstein1(mx, my), 0.0, m)
    a = chain.terminal_states(system, x, n, seed, R=R, threads=threads)
    b = chain.terminal_states(system, y, n, seed, R=R, threads=threads)
    v, se = _mean_se(np.abs(a - b))
    return Estimate(v, se, m)


@dataclass(frozen=True)
class SyncProfile:
    k: np.ndarray
    gap: np.ndarray
    stderr: np.ndarray
    modes: tuple[str, ...]
    q_hat: float
    degenerate: bool

    def rows(self):
        yield ("n_or_k", "value", "stderr", "mode")
        for k, g, s, m in zip(self.k, self.gap, self.stderr, self.modes):
            yield (int(k), repr(float(g)), repr(float(s)), m)


def fit_rate(k: np.ndarray, gap: np.ndarray, window: tuple[int, int] | None = None) -> float:
    """exp(slope) of log-gap against k; the default window is the tail half."""
    k = np.asarray(k)
    if window is None:
        sel = k >= k[0] + (k[-1] - k[0]) / 2.0
    else:
        sel = (k >= window[0]) & (k <= window[1])
    sel &= gap > 0
    if sel.sum() < 2:
        return math.nan
    return float(math.exp(np.polyfit(k[sel], np.log(gap[sel]), 1)[0]))


def sync_gap_profile(
    system: IfsSystem,
    x: float,
    y: float,
    n_max: int,
    mode: str = "auto",
    *,
    R: int = DEFAULT_R,
    seed: int = 0,
    budget: int = DEFAULT_BUDGET,
    window: tuple[int, int] | None = None,
    threads: int = 1,
) -> SyncProfile:
    """E|f^k(x) - f^k(y)| for k = 1..n_max and the fitted contraction rate."""
    x, y = _interior(x), _interior(y, "y")
    if mode not in ("exact", "mc", "auto"):
        raise ValidationError(f"mode must be exact, mc or auto, not {mode!r}")
    if mode == "exact":
        resolve_mode(system, n_max, "exact", budget)
    k_exact = 0
    if mode != "mc":
        while k_exact < n_max and fits_budget(system, k_exact + 1, budget):
            k_exact += 1
    gaps = np.zeros(n_max)
    ses = np.zeros(n_max)
    modes = ["exact"] * k_exact + ["mc"] * (n_max - k_exact)
    if k_exact:
        layers = zip(enumerate_layers(system, x, k_exact, budget), enumerate_layers(system, y, k_exact, budget))
        for j, ((sx, w), (sy, _)) in enumerate(layers):
            gaps[j] = math.fsum(w * np.abs(sx - sy))
    if k_exact < n_max:
        diffs = _coupled_gaps(system, x, y, n_max, R, seed, threads)
        for j in range(k_exact, n_max):
            gaps[j], ses[j] = _mean_se(diffs[j])
    k = np.arange(1, n_max + 1)
    degenerate = bool(x == y or not np.any(gaps > 0))
    q = math.nan if degenerate else fit_rate(k, gaps, window)
    return SyncProfile(k, gaps, ses, tuple(modes), q, degenerate)


def _coupled_gaps(system, x, y, n, R, seed, threads) -> np.ndarray:
    """|X_k - Y_k| under shared words, shape (n, R)."""
    out = np.empty((n, R))
    bx_iter = chain.iter_blocks(system, x, n, seed, R=R, threads=threads)
    by_iter = chain.iter_blocks(system, y, n, seed, R=R, threads=threads)
    for (end, bx, _), (_, by, _) in zip(bx_iter, by_iter):
        out[end - bx.shape[0] : end] = np.abs(bx - by)
    return out


@dataclass(frozen=True)
class OccupationResult:
    violations: int
    streams: int
    counts_x: np.ndarray = field(repr=False)
    counts_y: np.ndarray = field(repr=False)


def monotone_occupation_check(
    system: IfsSystem, x: float, y: float, xi: float, n: int, streams: int, seed: int = 0, *, threads: int = 1
) -> OccupationResult:
    """Visits to (0, xi) in k = 1..n from x and from y under shared words; a violation
    is a stream where the lower start visits less often."""
    if not x <= y:
        raise ValidationError("need x <= y")
    cx = np.zeros(streams, dtype=np.int64)
    cy = np.zeros(streams, dtype=np.int64)
    bx_iter = chain.iter_blocks(system, x, n, seed, R=streams, threads=threads)
    by_iter = chain.iter_blocks(system, y, n, seed, R=streams, threads=threads)
    for (_, bx, _), (_, by, _) in zip(bx_iter, by_iter):
        cx += ((bx > 0) & (bx < xi)).sum(axis=0)
        cy += ((by > 0) & (by < xi)).sum(axis=0)
    return OccupationResult(int((cx < cy).sum()), int(streams), cx, cy)


def reference_sample(system: IfsSystem, seed: int, n_burn: int = chain.DEFAULT_N_BURN, R: int = DEFAULT_R, *, threads: int = 1) -> np.ndarray:
    """Burn-in states used as a stand-in for the invariant measure (derived seed, replica order)."""
    return chain.burn_in_states(system, n_burn, R, chain.derive_seed(seed, REFERENCE_SALT), threads=threads)


def center_with_tent(g: Callable, sample) -> Callable:
    """``g - c * tent`` with c chosen so the sample mean vanishes; tent(x) = 1 - |2x - 1|.

    Keeps g(0) = g(1) = 0 when g has it.
    """
    pts = np.asarray(sample.points if isinstance(sample, EmpiricalMeasure) else sample, dtype=float)
    tent = 1.0 - np.abs(2.0 * pts - 1.0)
    c = math.fsum(as_values(g, pts)) / math.fsum(tent)

    def phi(x):
        x = np.asarray(x, dtype=float)
        return as_values(g, x) - c * (1.0 - np.abs(2.0 * x - 1.0))

    phi.coefficient = c
    return phi


@dataclass(frozen=True)
class CesaroResult:
    n: int
    sup: float
    argmax: float
    values: np.ndarray
    stderr: np.ndarray
    mode: str


def cesaro_norm(
    system: IfsSystem,
    phi: Callable,
    n: int,
    grid,
    mode: str = "auto",
    *,
    R: int = 10_000,
    seed: int = 0,
    budget: int = DEFAULT_BUDGET,
    threads: int = 1,
) -> CesaroResult:
    """sup over ``grid`` of |(1/n) sum_{k=1..n} U^k phi|."""
    ends = as_values(phi, np.array([0.0, 1.0]))
    if np.any(np.abs(ends) > 1e-12):
        raise ValidationError("phi must vanish at 0 and 1")
    grid = np.asarray(grid, dtype=float)
    m = resolve_mode(system, n, mode, budget)
    vals = np.empty(grid.size)
    ses = np.zeros(grid.size)
    for j, g in enumerate(grid):
        if m == "exact":
            ladder = dual_apply_ladder(system, phi, n, g, budget)
            vals[j] = math.fsum(ladder) / n
        else:
            vals[j], ses[j] = _mean_se(birkhoff_averages(system, phi, g, n, R, seed, threads=threads))
    j = int(np.argmax(np.abs(vals)))
    return CesaroResult(int(n), float(abs(vals[j])), float(grid[j]), vals, ses, m)


@dataclass(frozen=True)
class DualConvergence:
    n: int
    max_discrepancy: float
    argmax: float
    values: np.ndarray
    reference: float
    reference_stderr: float
    l2_discrepancy: float
    mode: str


def dual_convergence_check(
    system: IfsSystem,
    f: Callable,
    x_grid,
    n: int,
    mode: str = "auto",
    *,
    sample=None,
    reference: float | None = None,
    l2_points: int = 256,
    R: int = 10_000,
    seed: int = 0,
    budget: int = DEFAULT_BUDGET,
    threads: int = 1,
) -> DualConvergence:
    """max over the grid of |U^n f(x) - <mu*, f>| and the L2(mu*) discrepancy.

    ``<mu*, f>`` comes from ``reference`` when given (e.g. 1/2 for f = id on a
    reflection-symmetric system), else from the burn-in ``sample``.
    """
    grid = np.asarray(x_grid, dtype=float)
    if np.any(grid <= 0.0) or np.any(grid >= 1.0):
        raise ValidationError("grid must be interior: U^n f(0) = f(0) and U^n f(1) = f(1) never move")
    if sample is None:
        sample = reference_sample(system, seed, threads=threads)
    pts = np.asarray(sample.points if isinstance(sample, EmpiricalMeasure) else sample, dtype=float)
    fv = as_values(f, pts)
    ref_se = float(fv.std(ddof=1) / math.sqrt(fv.size)) if fv.size > 1 else 0.0
    if reference is None:
        reference = math.fsum(fv) / fv.size
    else:
        ref_se = 0.0
    if n < 1:
        raise ValidationError("n must be >= 1")
    m = resolve_mode(system, n, mode, budget)

    def u_n(points):
        out = np.empty(points.size)
        for j, g in enumerate(points):
            if m == "exact":
                for s, w in enumerate_layers(system, g, n, budget):
                    pass
                out[j] = math.fsum(w * as_values(f, s))
            else:
                out[j] = float(np.mean(as_values(f, chain.terminal_states(system, g, n, seed, R=R, threads=threads))))
        return out

    vals = u_n(grid)
    disc = np.abs(vals - reference)
    j = int(np.argmax(disc))
    l2_pts = pts[:l2_points]
    l2 = math.sqrt(float(np.mean((u_n(l2_pts) - reference) ** 2))) if l2_pts.size else math.nan
    return DualConvergence(int(n), float(disc[j]), float(grid[j]), vals, float(reference), ref_se, l2, m)


@dataclass(frozen=True)
class AtomDiagnostic:
    largest_mass: float
    location: float
    width: float
    atomless: bool


def atom_diagnostic(sample, width: float = ATOM_WIDTH, limit: float = ATOM_MASS_LIMIT) -> AtomDiagnostic:
    """Largest sample mass inside any window of the given width."""
    mu = sample if isinstance(sample, EmpiricalMeasure) else EmpiricalMeasure(sample)
    pts = mu.points
    cw = np.concatenate([[0.0], np.cumsum(mu.weights)])
    hi = np.searchsorted(pts, pts + width, side="right")
    mass = cw[hi] - cw[np.arange(pts.size)]
    j = int(np.argmax(mass))
    return AtomDiagnostic(float(mass[j]), float(pts[j]), width, bool(mass[j] < limit))
