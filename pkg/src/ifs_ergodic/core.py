"""Increasing piecewise-linear homeomorphisms of [0, 1] and the systems they generate.

Words are tuples of 1-based symbols applied left to right: ``word_apply(s, (1, 2), x)``
is ``f_2(f_1(x))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Iterator, Sequence

import numpy as np

from . import _kernels as K
from .empirical import EmpiricalMeasure
from .errors import BudgetExceeded, CalibrationInfeasible, ValidationError

DEFAULT_BUDGET = 2**20
DEFAULT_GRID = 10_001
EPSILON_MARGIN = 0.999
DELTA_MARGIN = 0.99

# node residuals below this are treated as zero when locating linearity radii
_NODE_TOL = 1e-14


def _readonly(a):
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


class PiecewiseLinearMap:
    """Increasing homeomorphism of [0, 1], linear between ``nodes``."""

    def __init__(self, nodes):
        arr = np.asarray(nodes, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 2:
            raise ValidationError("nodes must be a list of at least two (x, y) pairs")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("nodes must be finite")
        if tuple(arr[0]) != (0.0, 0.0) or tuple(arr[-1]) != (1.0, 1.0):
            raise ValidationError("first node must be (0, 0) and last node (1, 1)")
        dx = np.diff(arr[:, 0])
        dy = np.diff(arr[:, 1])
        if np.any(dx <= 0):
            raise ValidationError("node x-coordinates must be strictly increasing")
        if np.any(dy <= 0):
            raise ValidationError("node y-coordinates must be strictly increasing")
        self.xs = _readonly(arr[:, 0])
        self.ys = _readonly(arr[:, 1])
        slopes = dy / dx
        if not np.all(np.isfinite(slopes)) or np.any(slopes <= 0):
            raise ValidationError("segment slopes must be positive and finite")
        self.slopes = _readonly(slopes)
        self._sl = _readonly(np.append(slopes, 0.0))
        self._isl = _readonly(np.append(dx / dy, 0.0))

    @property
    def nodes(self) -> list[tuple[float, float]]:
        return [(float(x), float(y)) for x, y in zip(self.xs, self.ys)]

    @property
    def breakpoints(self) -> int:
        return self.xs.size

    def __call__(self, x):
        return _eval(self.xs, self.ys, self._sl, x)

    def inverse(self, y):
        return _eval(self.ys, self.xs, self._isl, y)

    def endpoint_slopes(self) -> tuple[float, float]:
        return float(self.slopes[0]), float(self.slopes[-1])

    def inverse_map(self) -> PiecewiseLinearMap:
        return PiecewiseLinearMap(np.column_stack([self.ys, self.xs]))

    def reflected(self) -> PiecewiseLinearMap:
        """The conjugate ``x -> 1 - f(1 - x)``; swaps the roles of the two endpoints."""
        return PiecewiseLinearMap(np.column_stack([1.0 - self.xs[::-1], 1.0 - self.ys[::-1]]))

    def __eq__(self, other):
        return (
            isinstance(other, PiecewiseLinearMap)
            and np.array_equal(self.xs, other.xs)
            and np.array_equal(self.ys, other.ys)
        )

    def __hash__(self):
        return hash((self.xs.tobytes(), self.ys.tobytes()))

    def __repr__(self):
        return f"PiecewiseLinearMap({self.nodes})"


def _eval(xs, ys, sl, x):
    if np.ndim(x) == 0:
        xf = float(x)
        if not 0.0 <= xf <= 1.0:
            raise ValidationError(f"point {xf!r} outside [0, 1]")
        return K.pl_eval(xs, ys, sl, xf)
    arr = np.ascontiguousarray(x, dtype=float)
    if arr.size and not (np.all(arr >= 0.0) and np.all(arr <= 1.0)):
        raise ValidationError("points outside [0, 1]")
    out = np.empty_like(arr)
    K.pl_eval_array(xs, ys, sl, arr.ravel(), out.ravel())
    return out


class IfsSystem:
    """The family ``(f_1, ..., f_N; p_1, ..., p_N)``."""

    def __init__(self, maps: Sequence[PiecewiseLinearMap], probs: Sequence[float]):
        maps = tuple(m if isinstance(m, PiecewiseLinearMap) else PiecewiseLinearMap(m) for m in maps)
        probs = np.asarray(probs, dtype=float)
        if len(maps) < 2:
            raise ValidationError("a system needs at least two maps")
        if probs.shape != (len(maps),):
            raise ValidationError(f"expected {len(maps)} probabilities, got {probs.size}")
        if not np.all(np.isfinite(probs)) or np.any(probs < 0):
            raise ValidationError("probabilities must be nonnegative")
        total = math.fsum(probs)
        if abs(total - 1.0) > 1e-12:
            raise ValidationError(f"probabilities sum to {total!r}, not 1")
        self.maps = maps
        self.probs = _readonly(probs)

    @property
    def n_maps(self) -> int:
        return len(self.maps)

    @cached_property
    def packed(self):
        """Flat node arrays for the compiled kernels: (xs, ys, slopes, offsets, cumulative probs)."""
        xs = np.concatenate([m.xs for m in self.maps])
        ys = np.concatenate([m.ys for m in self.maps])
        sl = np.concatenate([m._sl for m in self.maps])
        off = np.zeros(self.n_maps + 1, dtype=np.int64)
        off[1:] = np.cumsum([m.breakpoints for m in self.maps])
        cum = np.cumsum(self.probs)
        cum[-1] = 1.0
        return xs, ys, sl, off, cum

    def to_dict(self) -> dict:
        return {
            "maps": [{"nodes": [list(p) for p in m.nodes]} for m in self.maps],
            "probs": [float(p) for p in self.probs],
        }

    def __repr__(self):
        return f"IfsSystem(N={self.n_maps}, probs={self.probs.tolist()})"


def am2(probs=(0.5, 0.5)) -> IfsSystem:
    """Two reflection-symmetric maps: f1 has slopes (1/2, 3), f2 has slopes (3, 1/2)."""
    f1 = PiecewiseLinearMap([(0.0, 0.0), (0.8, 0.4), (1.0, 1.0)])
    f2 = PiecewiseLinearMap([(0.0, 0.0), (0.2, 0.6), (1.0, 1.0)])
    return IfsSystem([f1, f2], probs)


def identity_map() -> PiecewiseLinearMap:
    return PiecewiseLinearMap([(0.0, 0.0), (1.0, 1.0)])


# ---------------------------------------------------------------------------
# evaluation


def eval_map(f: PiecewiseLinearMap, x):
    return f(x)


def eval_inverse(f: PiecewiseLinearMap, y):
    return f.inverse(y)


def endpoint_slopes(f: PiecewiseLinearMap) -> tuple[float, float]:
    return f.endpoint_slopes()


def _word_indices(system: IfsSystem, word) -> np.ndarray:
    w = np.asarray(word, dtype=np.int64).ravel()
    if w.size and (w.min() < 1 or w.max() > system.n_maps):
        raise ValidationError(f"symbols must lie in 1..{system.n_maps}")
    return w - 1


def word_states(system: IfsSystem, word, x: float) -> np.ndarray:
    """States after each prefix of ``word``: entry k is f applied to the first k+1 symbols."""
    w = _word_indices(system, word)
    x = float(x)
    if not 0.0 <= x <= 1.0:
        raise ValidationError(f"point {x!r} outside [0, 1]")
    xs, ys, sl, off, _ = system.packed
    out = np.empty(w.size)
    K.apply_word(xs, ys, sl, off, w, x, out)
    return out


def word_apply(system: IfsSystem, word, x: float) -> float:
    states = word_states(system, word, x)
    return float(states[-1]) if states.size else float(x)


# ---------------------------------------------------------------------------
# admissibility


@dataclass(frozen=True)
class AdmissibilityReport:
    crossing_ok: bool
    worst_point: float
    worst_margin: float
    lyap0: float
    lyap1: float
    slopes_ok: bool
    probs_positive: bool
    admissible: bool

    def to_record(self) -> dict:
        return dict(self.__dict__)


def _crossing_violation(lo_vals, hi_vals, open_left, open_right, below):
    """Point in [0, 1] (interval parameter) where every linear function is >= 0
    (``below`` condition fails) or <= 0 (``above`` fails); None if there is none."""
    lo, hi = 0.0, 1.0
    for a, b in zip(lo_vals, hi_vals):
        if not below:
            a, b = -a, -b
        # need a + t (b - a) >= 0
        d = b - a
        if d > 0:
            lo = max(lo, -a / d)
        elif d < 0:
            hi = min(hi, -a / d)
        elif a < 0:
            return None
    if lo > hi:
        return None
    if open_left and hi <= 0.0:
        return None
    if open_right and lo >= 1.0:
        return None
    t = 0.5 * (lo + hi)
    if open_left and t <= 0.0:
        t = 0.5 * hi
    if open_right and t >= 1.0:
        t = 0.5 * (lo + 1.0)
    return t


def check_admissible(system: IfsSystem, grid_points: int = DEFAULT_GRID) -> AdmissibilityReport:
    """Crossing property, endpoint slopes and Lyapunov exponents at 0 and 1.

    The crossing property is decided exactly on every interval between the
    union of breakpoints (each ``f_i - id`` is linear there), and sampled on a
    uniform grid to locate the point of least margin.
    """
    maps = system.maps
    knots = np.unique(np.concatenate([m.xs for m in maps]))
    gvals = np.array([m(knots) - knots for m in maps])
    violation = None
    for k in range(knots.size - 1):
        for below in (True, False):
            t = _crossing_violation(
                gvals[:, k], gvals[:, k + 1], knots[k] == 0.0, knots[k + 1] == 1.0, below
            )
            if t is not None and violation is None:
                violation = knots[k] + t * (knots[k + 1] - knots[k])

    grid = np.arange(1, grid_points + 1) / (grid_points + 1)
    probe = np.unique(np.concatenate([grid, knots[(knots > 0) & (knots < 1)]]))
    g = np.array([m(probe) - probe for m in maps])
    # margin > 0 means the crossing holds at that point
    margin = np.minimum(-g.min(axis=0), g.max(axis=0))
    j = int(np.argmin(margin))
    worst_point, worst_margin = float(probe[j]), float(margin[j])
    if violation is not None:
        worst_point = float(violation)
        worst_margin = min(worst_margin, 0.0)
    crossing_ok = violation is None and worst_margin > 0

    s0 = np.array([m.endpoint_slopes()[0] for m in maps])
    s1 = np.array([m.endpoint_slopes()[1] for m in maps])
    p = system.probs
    lyap0 = math.fsum(p * np.log(s0))
    lyap1 = math.fsum(p * np.log(s1))
    slopes_ok = bool(np.all(s0 > 0) and np.all(s1 > 0))
    probs_positive = bool(np.all(p > 0))
    return AdmissibilityReport(
        crossing_ok=bool(crossing_ok),
        worst_point=worst_point,
        worst_margin=worst_margin,
        lyap0=lyap0,
        lyap1=lyap1,
        slopes_ok=slopes_ok,
        probs_positive=probs_positive,
        admissible=bool(crossing_ok and lyap0 > 0 and lyap1 > 0 and slopes_ok and probs_positive),
    )


# ---------------------------------------------------------------------------
# calibration


@dataclass(frozen=True)
class CalibrationConstants:
    alpha: float
    lambda_lo: tuple[float, ...]
    lambda_hi: tuple[float, ...]
    epsilon: float
    delta: float
    M: float
    epsilon_max: float = math.nan
    delta_max: float = math.nan
    s_lo: float = math.nan
    s_hi: float = math.nan

    def to_record(self) -> dict:
        d = dict(self.__dict__)
        d["lambda_lo"] = list(self.lambda_lo)
        d["lambda_hi"] = list(self.lambda_hi)
        return d


@dataclass(frozen=True)
class BoundRegime:
    n: int
    k: int
    eps_n: float
    gamma_n: float


def _linear_radius(f: PiecewiseLinearMap, sense: int) -> float:
    """Largest r with ``sense * (f(x) - f'(0) x) >= 0`` on [0, r]."""
    lam = f.slopes[0]
    g = sense * (f.ys - lam * f.xs)
    g[np.abs(g) <= _NODE_TOL] = 0.0
    bad = np.nonzero(g < 0)[0]
    if bad.size == 0:
        return 1.0
    j = int(bad[0])
    g0, g1 = max(g[j - 1], 0.0), g[j]
    return float(f.xs[j - 1] + g0 / (g0 - g1) * (f.xs[j] - f.xs[j - 1]))


def linearization_radius(system: IfsSystem) -> float:
    """Largest r <= 1/2 on which the endpoint-slope bounds hold for all maps and inverses.

    For x <= r: f(x) >= f'(0) x, 1 - f(1 - x) >= f'(1) x,
    f^-1(x) <= x / f'(0), f^-1(1 - x) >= 1 - x / f'(1).
    """
    r = 0.5
    for f in system.maps:
        fr = f.reflected()
        r = min(
            r,
            _linear_radius(f, +1),
            _linear_radius(fr, +1),
            _linear_radius(f.inverse_map(), -1),
            _linear_radius(fr.inverse_map(), -1),
        )
    return r


def calibrate(system: IfsSystem, alpha: float) -> CalibrationConstants:
    if not 0.0 < alpha < 1.0:
        raise ValidationError(f"alpha must lie in (0, 1), got {alpha!r}")
    rep = check_admissible(system)
    if not rep.admissible:
        raise CalibrationInfeasible("system is not admissible; see `admissible` report")
    lam_lo = np.array([m.endpoint_slopes()[0] for m in system.maps])
    lam_hi = np.array([m.endpoint_slopes()[1] for m in system.maps])
    p = system.probs
    s_lo = math.fsum(p * lam_lo**-alpha)
    s_hi = math.fsum(p * lam_hi**-alpha)
    for name, s in (("sum p_i lambda_lo_i^-alpha", s_lo), ("sum p_i lambda_hi_i^-alpha", s_hi)):
        if s >= 1.0:
            raise CalibrationInfeasible(
                f"{name} = {s:.6g} >= 1: no delta > 0 with the sum below (1 - delta)^alpha; "
                "try a smaller alpha"
            )
    delta_max = 1.0 - max(s_lo, s_hi) ** (1.0 / alpha)
    eps_max = linearization_radius(system)
    epsilon = EPSILON_MARGIN * eps_max
    return CalibrationConstants(
        alpha=float(alpha),
        lambda_lo=tuple(float(v) for v in lam_lo),
        lambda_hi=tuple(float(v) for v in lam_hi),
        epsilon=epsilon,
        delta=DELTA_MARGIN * delta_max,
        M=epsilon**-alpha,
        epsilon_max=eps_max,
        delta_max=delta_max,
        s_lo=s_lo,
        s_hi=s_hi,
    )


def alpha_sweep(system: IfsSystem, alphas) -> list[tuple[float, float | None]]:
    """(alpha, delta) for each alpha; delta is None where calibration is infeasible."""
    out = []
    for a in alphas:
        try:
            out.append((float(a), calibrate(system, float(a)).delta))
        except CalibrationInfeasible:
            out.append((float(a), None))
    return out


def quartic_floor(n: int) -> int:
    """floor(n ** (1/4)) in exact integer arithmetic."""
    return math.isqrt(math.isqrt(int(n)))


def regime(consts: CalibrationConstants, n: int) -> BoundRegime:
    if n < 1:
        raise ValidationError("n must be >= 1")
    k = quartic_floor(n)
    base = 1.0 - consts.delta
    return BoundRegime(n=int(n), k=k, eps_n=base ** (k / 2), gamma_n=base ** (consts.alpha * k / 2))


# ---------------------------------------------------------------------------
# exact enumeration


def as_values(phi: Callable, x: np.ndarray) -> np.ndarray:
    """Evaluate a test function on an array, accepting scalar-valued callables."""
    return np.broadcast_to(np.asarray(phi(x), dtype=float), x.shape)


def check_budget(system: IfsSystem, n: int, budget: int = DEFAULT_BUDGET, what="enumeration") -> int:
    words = system.n_maps ** int(n)
    if words > budget:
        raise BudgetExceeded(words, budget, what)
    return words


def fits_budget(system: IfsSystem, n: int, budget: int = DEFAULT_BUDGET) -> bool:
    return system.n_maps ** int(n) <= budget


def enumerate_layers(
    system: IfsSystem, x: float, n: int, budget: int = DEFAULT_BUDGET
) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield ``(states, weights)`` over all words of length 1..n started at ``x``.

    Layer k has N^k entries; entry ``m * N + i`` extends word ``m`` of layer
    k-1 by symbol ``i + 1``, so per-word quantities carried between layers
    are extended with ``np.repeat(a, N)``.
    """
    check_budget(system, n, budget)
    x = float(x)
    if not 0.0 <= x <= 1.0:
        raise ValidationError(f"point {x!r} outside [0, 1]")
    states = np.array([x])
    weights = np.array([1.0])
    N = system.n_maps
    for _ in range(int(n)):
        nxt = np.empty(states.size * N)
        nw = np.empty(states.size * N)
        for i, f in enumerate(system.maps):
            nxt[i::N] = f(states)
            nw[i::N] = weights * system.probs[i]
        states, weights = nxt, nw
        yield states, weights


def dual_apply_exact(system: IfsSystem, phi: Callable, n: int, x: float, budget: int = DEFAULT_BUDGET) -> float:
    """U^n phi(x) as the full weighted sum over words of length n."""
    if n == 0:
        return float(as_values(phi, np.array([float(x)]))[0])
    for states, weights in enumerate_layers(system, x, n, budget):
        pass
    return math.fsum(weights * as_values(phi, states))


def dual_apply_ladder(system: IfsSystem, phi: Callable, n: int, x: float, budget: int = DEFAULT_BUDGET) -> np.ndarray:
    """``[U^1 phi(x), ..., U^n phi(x)]`` from one enumeration."""
    return np.array([math.fsum(w * as_values(phi, s)) for s, w in enumerate_layers(system, x, n, budget)])


def markov_step_atoms(system: IfsSystem, mu: EmpiricalMeasure) -> EmpiricalMeasure:
    """Exact pushforward ``sum_i p_i mu o f_i^-1`` of a finitely supported measure."""
    if mu.size == 0:
        return EmpiricalMeasure.empty()
    pts = np.concatenate([f(mu.points) for f in system.maps])
    wts = np.concatenate([p * mu.weights for p in system.probs])
    keep = wts > 0
    return EmpiricalMeasure(pts[keep], wts[keep])
