"""Central limit behaviour of Birkhoff sums: variance, normality tests, characteristic functions.

Sums exclude the start term: S_n = phi(X_1) + ... + phi(X_n).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from . import _kernels as K
from . import chain
from .core import DEFAULT_BUDGET, IfsSystem, as_values, check_budget, enumerate_layers, fits_budget
from .errors import ValidationError

CENTER_SALT = 0xCE47_E500_0000_0003
DEFAULT_CENTER_BURN = 1_000
DEFAULT_CENTER_R = 100_000
MIN_SIGMA2_R = 30
KS_TERMS = 100
INNER_SHIFT = 32


@dataclass(frozen=True)
class Center:
    value: float
    stderr: float
    source: str  # "given" or "burn-in"


def estimate_center(
    system: IfsSystem,
    phi: Callable,
    seed: int,
    n_burn: int = DEFAULT_CENTER_BURN,
    R: int = DEFAULT_CENTER_R,
    *,
    threads: int = 1,
) -> Center:
    """<mu*, phi> from a burn-in run on a seed derived from ``seed``."""
    pts = chain.burn_in_states(system, n_burn, R, chain.derive_seed(seed, CENTER_SALT), threads=threads)
    v = as_values(phi, pts)
    se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    return Center(math.fsum(v) / v.size, se, "burn-in")


def _center(system, phi, center, seed, threads) -> Center:
    if center is None:
        return estimate_center(system, phi, seed, threads=threads)
    if isinstance(center, Center):
        return center
    return Center(float(center), 0.0, "given")


@dataclass(frozen=True)
class NormalizedSums:
    samples: np.ndarray
    n: int
    start: str
    center: Center

    @property
    def R(self) -> int:
        return self.samples.size

    def rows(self):
        yield ("replica", "value")
        for r, v in enumerate(self.samples):
            yield (r, repr(float(v)))


def _start_label(start) -> str:
    if isinstance(start, str):
        return start
    if np.ndim(start) == 0:
        return repr(float(start))
    return "points"


def sum_blocks(system, phi, starts, n, seed, c, *, R, threads=1, streams=None, breaks=()):
    """Yield ``(step, acc)`` at each break and at n, where ``acc[r] = sum_{j<=step} (phi(X_j) - c)``."""
    acc = np.zeros(R)
    marks = set(int(b) for b in breaks) | {int(n)}
    for end, bx, _ in chain.iter_blocks(system, starts, n, seed, streams, R=R, threads=threads, breaks=sorted(marks)):
        K.row_accumulate(acc, as_values(phi, bx) - c)
        if end in marks:
            yield end, acc.copy()


def normalized_sums(
    system: IfsSystem,
    phi: Callable,
    start,
    n: int,
    R: int,
    seed: int,
    *,
    center=None,
    n_burn: int = chain.DEFAULT_N_BURN,
    threads: int = 1,
) -> NormalizedSums:
    """``R`` samples of S_n / sqrt(n) of the centered observable.

    ``start`` is a point, an array with one point per replica, or
    ``"stationary"`` (burn-in starts). ``center`` is a number, a Center, or
    None to estimate it.
    """
    if n < 1 or R < 1:
        raise ValidationError("need n >= 1 and R >= 1")
    c = _center(system, phi, center, seed, threads)
    x0 = chain.resolve_starts(system, start, R, seed, n_burn, threads)
    for _, acc in sum_blocks(system, phi, x0, n, seed, c.value, R=R, threads=threads):
        pass
    return NormalizedSums(acc / math.sqrt(n), int(n), _start_label(start), c)


def exact_sum_law(
    system: IfsSystem, phi: Callable, x: float, n: int, *, center: float = 0.0, budget: int = DEFAULT_BUDGET
) -> tuple[np.ndarray, np.ndarray]:
    """All values of S_n / sqrt(n) from ``x`` with their word probabilities."""
    if n < 1:
        raise ValidationError("n must be >= 1")
    sums = np.zeros(1)
    N = system.n_maps
    for states, weights in enumerate_layers(system, x, n, budget):
        sums = np.repeat(sums, N) + (as_values(phi, states) - center)
    return sums / math.sqrt(n), weights


def estimate_sigma2(samples) -> tuple[float, float]:
    """Second moment about 0 and its jackknife standard error."""
    s = np.asarray(samples, dtype=float)
    R = s.size
    if R < MIN_SIGMA2_R:
        raise ValidationError(f"need at least {MIN_SIGMA2_R} samples, got {R}")
    sq = s * s
    total = math.fsum(sq)
    loo = (total - sq) / (R - 1)
    se = math.sqrt((R - 1) / R * math.fsum((loo - loo.mean()) ** 2))
    return total / R, se


def normal_cdf(x, sigma: float = 1.0):
    z = np.asarray(x, dtype=float) / (sigma * math.sqrt(2.0))
    return 0.5 * np.vectorize(math.erfc, otypes=[float])(-z)


def kolmogorov_sf(lam: float, terms: int = KS_TERMS) -> float:
    """P(K > lam) for the limiting Kolmogorov distribution."""
    if lam <= 0.0:
        return 1.0
    if lam < 1.0:
        # Jacobi theta form; the alternating series converges slowly here
        s = math.fsum(math.exp(-((2 * j - 1) ** 2) * math.pi**2 / (8.0 * lam * lam)) for j in range(1, terms + 1))
        return min(1.0, max(0.0, 1.0 - math.sqrt(2.0 * math.pi) / lam * s))
    s = math.fsum((-1) ** (j - 1) * math.exp(-2.0 * j * j * lam * lam) for j in range(1, terms + 1))
    return min(1.0, max(0.0, 2.0 * s))


def ks_statistic(samples, sigma: float) -> tuple[float, float]:
    """One-sample KS distance to N(0, sigma^2) and its asymptotic p-value."""
    if not sigma > 0.0:
        raise ValidationError("sigma must be positive")
    x = np.sort(np.asarray(samples, dtype=float))
    R = x.size
    if R == 0:
        raise ValidationError("no samples")
    F = normal_cdf(x, sigma)
    i = np.arange(1, R + 1)
    D = float(max(np.max(i / R - F), np.max(F - (i - 1) / R)))
    return D, kolmogorov_sf(math.sqrt(R) * D)


def ks_two_sample(a, b) -> tuple[float, float]:
    """Two-sample KS distance and its asymptotic p-value."""
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    if a.size == 0 or b.size == 0:
        raise ValidationError("no samples")
    grid = np.concatenate([a, b])
    Fa = np.searchsorted(a, grid, side="right") / a.size
    Fb = np.searchsorted(b, grid, side="right") / b.size
    D = float(np.max(np.abs(Fa - Fb)))
    m = a.size * b.size / (a.size + b.size)
    return D, kolmogorov_sf(math.sqrt(m) * D)


@dataclass(frozen=True)
class CharFnTable:
    t: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    n: int
    start: str
    mode: str

    def rows(self):
        yield ("t", "re", "im", "stderr")
        for t, v, s in zip(self.t, self.values, self.stderr):
            yield (repr(float(t)), repr(float(v.real)), repr(float(v.imag)), repr(float(s)))


def _char_values(t_grid, samples, weights=None):
    t = np.asarray(t_grid, dtype=float)
    if not np.all(np.isfinite(t)):
        raise ValidationError("t grid must be finite")
    vals = np.empty(t.size, dtype=complex)
    ses = np.zeros(t.size)
    for j, tj in enumerate(np.abs(t)):
        if tj == 0.0:
            vals[j] = 1.0
            continue
        ph = tj * samples
        c, s = np.cos(ph), np.sin(ph)
        if weights is None:
            vals[j] = complex(math.fsum(c) / c.size, math.fsum(s) / s.size)
            if c.size > 1:
                ses[j] = math.sqrt((c.var(ddof=1) + s.var(ddof=1)) / c.size)
        else:
            vals[j] = complex(math.fsum(weights * c), math.fsum(weights * s))
    vals[t < 0] = np.conj(vals[t < 0])
    return t, vals, ses


def char_fn(
    system: IfsSystem,
    phi: Callable,
    start,
    n: int,
    t_grid,
    R: int = 100_000,
    seed: int = 0,
    *,
    mode: str = "mc",
    center=0.0,
    budget: int = DEFAULT_BUDGET,
    n_burn: int = chain.DEFAULT_N_BURN,
    threads: int = 1,
) -> CharFnTable:
    """Phi_n(t) = E exp(i t S_n / sqrt(n)); exact mode needs a single start point."""
    if mode == "auto":
        mode = "exact" if not isinstance(start, str) and np.ndim(start) == 0 and fits_budget(system, n, budget) else "mc"
    if mode == "exact":
        if isinstance(start, str) or np.ndim(start) != 0:
            raise ValidationError("exact mode needs a single start point")
        c = _center(system, phi, center, seed, threads).value
        vals, w = exact_sum_law(system, phi, float(start), n, center=c, budget=budget)
        t, v, se = _char_values(t_grid, vals, w)
    elif mode == "mc":
        sums = normalized_sums(system, phi, start, n, R, seed, center=center, n_burn=n_burn, threads=threads)
        t, v, se = _char_values(t_grid, sums.samples)
    else:
        raise ValidationError(f"mode must be exact, mc or auto, not {mode!r}")
    return CharFnTable(t, v, se, int(n), _start_label(start), mode)


def char_fn_gap(a: CharFnTable, b: CharFnTable) -> tuple[float, float, float]:
    """(sup_t |Phi_a - Phi_b|, its propagated stderr, argmax t)."""
    if a.n != b.n or a.t.shape != b.t.shape or not np.array_equal(a.t, b.t):
        raise ValidationError("tables need the same n and t grid")
    d = np.abs(a.values - b.values)
    j = int(np.argmax(d))
    return float(d[j]), float(math.hypot(a.stderr[j], b.stderr[j])), float(a.t[j])


@dataclass(frozen=True)
class MwGrowth:
    n_list: tuple[int, ...]
    norms: np.ndarray
    stderr: np.ndarray
    exponent: float
    exponent_stderr: float
    mode: str

    def rows(self):
        yield ("n_or_k", "value", "stderr", "mode")
        for n, v, s in zip(self.n_list, self.norms, self.stderr):
            yield (n, repr(float(v)), repr(float(s)), self.mode)


def _slope(n_list, norms):
    ok = norms > 0
    if ok.sum() < 2:
        return math.nan
    return float(np.polyfit(np.log(np.asarray(n_list)[ok]), np.log(norms[ok]), 1)[0])


def mw_growth(
    system: IfsSystem,
    phi: Callable,
    n_list,
    y_samples,
    inner_R: int = 1_000,
    seed: int = 0,
    *,
    mode: str = "auto",
    center: float = 0.0,
    budget: int = DEFAULT_BUDGET,
    threads: int = 1,
) -> MwGrowth:
    """||sum_{j=1..n} U^j phi||_{L2} over ``y_samples`` for each n, and the log-log growth exponent.

    Monte Carlo estimates G(y) = sum_j U^j phi(y) by ``inner_R`` runs from y on
    streams ``outer * 2**32 + inner`` and removes the bias s^2 / inner_R of the
    squared mean. Standard errors are jackknife over the outer samples.
    """
    n_list = tuple(int(n) for n in n_list)
    if not n_list or any(b <= a for a, b in zip(n_list, n_list[1:])) or n_list[0] < 1:
        raise ValidationError("n_list must be ascending positive integers")
    ys = np.asarray(y_samples, dtype=float).ravel()
    Y = ys.size
    if Y < 2:
        raise ValidationError("need at least 2 y samples")
    n_max = n_list[-1]
    if mode == "auto":
        mode = "exact" if fits_budget(system, n_max, budget) else "mc"
    sq = np.empty((len(n_list), Y))  # per-y estimate of G(y)^2
    if mode == "exact":
        check_budget(system, n_max, budget)
        N = system.n_maps
        for o, y in enumerate(ys):
            acc = np.zeros(1)
            col = 0
            for k, (states, weights) in enumerate(enumerate_layers(system, y, n_max, budget), start=1):
                acc = np.repeat(acc, N) + (as_values(phi, states) - center)
                if k == n_list[col]:
                    sq[col, o] = math.fsum(weights * acc) ** 2
                    col += 1
    elif mode == "mc":
        if inner_R < 2:
            raise ValidationError("inner_R must be >= 2")
        if Y >= 1 << INNER_SHIFT or inner_R >= 1 << INNER_SHIFT:
            raise ValidationError("outer and inner counts must stay below 2**32")
        streams = (np.repeat(np.arange(Y, dtype=np.uint64), inner_R) << np.uint64(INNER_SHIFT)) | np.tile(
            np.arange(inner_R, dtype=np.uint64), Y
        )
        starts = np.repeat(ys, inner_R)
        col = 0
        for step, acc in sum_blocks(system, phi, starts, n_max, seed, center, R=Y * inner_R, threads=threads, streams=streams, breaks=n_list):
            if step != n_list[col]:
                continue
            g = acc.reshape(Y, inner_R)
            sq[col] = g.mean(axis=1) ** 2 - g.var(axis=1, ddof=1) / inner_R
            col += 1
    else:
        raise ValidationError(f"mode must be exact, mc or auto, not {mode!r}")

    def norms_of(m2):
        return np.sqrt(np.maximum(m2, 0.0))

    total = sq.sum(axis=1)
    norms = norms_of(total / Y)
    loo = norms_of((total[:, None] - sq) / (Y - 1))  # (len(n_list), Y)
    jk = lambda vals: math.sqrt((Y - 1) / Y * float(np.sum((vals - vals.mean()) ** 2)))
    ses = np.array([jk(loo[i]) for i in range(len(n_list))])
    exponent = _slope(n_list, norms) if len(n_list) >= 2 else math.nan
    if len(n_list) >= 2:
        slopes = np.array([_slope(n_list, loo[:, o]) for o in range(Y)])
        exp_se = jk(slopes) if np.all(np.isfinite(slopes)) else math.nan
    else:
        exp_se = math.nan
    return MwGrowth(n_list, norms, ses, exponent, exp_se, mode)


@dataclass(frozen=True)
class CltReport:
    n: int
    R: int
    start: str
    center: float
    center_stderr: float
    sigma2_hat: float
    sigma2_stderr: float
    ks_statistic: float | None
    ks_pvalue: float | None
    sigma_estimated: bool
    note: str
    samples_file: str | None = None
    char_table: str | None = None

    def to_record(self) -> dict:
        return asdict(self)


def clt_report(sums: NormalizedSums, samples_file: str | None = None, char_table: str | None = None) -> CltReport:
    """sigma^2 estimate and a KS test against N(0, sigma_hat^2) (approximate: sigma is plugged in)."""
    s2, se = estimate_sigma2(sums.samples)
    if s2 > 0.0:
        D, p = ks_statistic(sums.samples, math.sqrt(s2))
        note = "KS reference uses the estimated sigma; the p-value is approximate"
    else:
        D = p = None
        note = "sigma_hat = 0: KS skipped (coboundary-like observable)"
    return CltReport(
        n=sums.n,
        R=sums.R,
        start=sums.start,
        center=sums.center.value,
        center_stderr=sums.center.stderr,
        sigma2_hat=s2,
        sigma2_stderr=se,
        ks_statistic=D,
        ks_pvalue=p,
        sigma_estimated=True,
        note=note,
        samples_file=samples_file,
        char_table=char_table,
    )
