"""Tail classes P_{M,alpha} and numerical checks of the escape, boundary-mass and return bounds."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import chain
from .core import (
    DEFAULT_BUDGET,
    CalibrationConstants,
    IfsSystem,
    check_budget,
    enumerate_layers,
    fits_budget,
    markov_step_atoms,
    quartic_floor,
    regime,
)
from .empirical import EmpiricalMeasure, empirical_cdf, wasserstein1
from .errors import ValidationError

__all__ = [
    "EmpiricalMeasure",
    "empirical_cdf",
    "wasserstein1",
    "BoundCheck",
    "MembershipReport",
    "class_membership",
    "class_invariance_test",
    "tail_exponent_fit",
    "verify_escape_bound",
    "verify_boundary_mass",
    "verify_return_probability",
    "resolve_mode",
]

# absolute slack for float noise in exact comparisons such as M * eps**alpha == 1
MEMBERSHIP_SLACK = 1e-12
MC_SIGMAS = 3.0
DEFAULT_MC_R = 100_000


def resolve_mode(system: IfsSystem, n: int, mode: str, budget: int = DEFAULT_BUDGET) -> str:
    """'exact' or 'mc'. 'auto' picks exact when N^n fits the budget."""
    if mode == "auto":
        return "exact" if fits_budget(system, n, budget) else "mc"
    if mode == "exact":
        check_budget(system, n, budget)
        return mode
    if mode == "mc":
        return mode
    raise ValidationError(f"mode must be exact, mc or auto, not {mode!r}")


@dataclass(frozen=True)
class MembershipReport:
    member_minus: bool
    member_plus: bool
    worst_minus: tuple[float, float]
    worst_plus: tuple[float, float]

    @property
    def member(self) -> bool:
        return self.member_minus and self.member_plus


def class_membership(mu: EmpiricalMeasure, M: float, alpha: float) -> MembershipReport:
    """Exact test of ``mu([0,x]) <= M x^a`` and ``mu([1-x,1]) <= M x^a`` for all x.

    Both sides are monotone and the CDF only jumps at atoms, so the suprema of
    the excesses are attained at atom locations. Worst entries are
    ``(location, excess)``.
    """
    if mu.size == 0:
        return MembershipReport(True, True, (math.nan, -math.inf), (math.nan, -math.inf))
    pts, w = mu.points, mu.weights
    breaks = np.nonzero(np.diff(pts))[0]
    last = np.r_[breaks, pts.size - 1]
    first = np.r_[0, breaks + 1]
    upts = pts[last]
    below = np.cumsum(w)[last]
    above = np.cumsum(w[::-1])[::-1][first]
    ex_minus = below - M * upts**alpha
    ex_plus = above - M * (1.0 - upts) ** alpha
    jm, jp = int(np.argmax(ex_minus)), int(np.argmax(ex_plus))
    return MembershipReport(
        member_minus=bool(ex_minus[jm] <= MEMBERSHIP_SLACK),
        member_plus=bool(ex_plus[jp] <= MEMBERSHIP_SLACK),
        worst_minus=(float(upts[jm]), float(ex_minus[jm])),
        worst_plus=(float(upts[jp]), float(ex_plus[jp])),
    )


@dataclass(frozen=True)
class InvarianceResult:
    holds: bool
    steps: int
    violations: int
    first_violation: int | None
    atoms: int


def class_invariance_test(
    system: IfsSystem, consts: CalibrationConstants, mu: EmpiricalMeasure, steps: int, budget: int = DEFAULT_BUDGET
) -> InvarianceResult:
    """Push ``mu`` forward exactly ``steps`` times, re-checking P_{M,alpha} after each step."""
    if not class_membership(mu, consts.M, consts.alpha).member:
        raise ValidationError("starting measure is not in P_{M,alpha}")
    check_budget(system, steps, max(1, budget // max(mu.size, 1)), "pushforward")
    violations = 0
    first = None
    for s in range(1, steps + 1):
        mu = markov_step_atoms(system, mu)
        if not class_membership(mu, consts.M, consts.alpha).member:
            violations += 1
            first = s if first is None else first
    return InvarianceResult(violations == 0, steps, violations, first, mu.size)


def tail_exponent_fit(mu: EmpiricalMeasure, fraction: float = 0.1) -> tuple[float, float]:
    """Log-log slopes of the lower CDF and upper tail mass over the extreme ``fraction`` of atoms."""
    if mu.size < 100:
        raise ValidationError("tail fit needs at least 100 atoms")
    m = max(2, int(mu.size * fraction))
    cw = np.cumsum(mu.weights)
    lo_x, lo_F = mu.points[:m], cw[:m]
    tw = np.cumsum(mu.weights[::-1])
    hi_x, hi_F = 1.0 - mu.points[::-1][:m], tw[:m]
    return _loglog_slope(lo_x, lo_F, "lower"), _loglog_slope(hi_x, hi_F, "upper")


def _loglog_slope(x, F, side):
    keep = x > 0
    x, F = x[keep], F[keep]
    if x.size < 2 or np.ptp(x) == 0:
        raise ValidationError(f"no {side}-tail data to fit (atoms coincide)")
    lx, lF = np.log(x), np.log(F)
    return float(np.polyfit(lx, lF, 1)[0])


# ---------------------------------------------------------------------------
# bound checks


@dataclass(frozen=True)
class BoundCheck:
    lemma: str
    n: int
    k: int
    x: float
    mode: str
    estimate: float
    stderr: float
    bound: float
    direction: str  # "le": estimate <= bound is the claim; "ge": estimate >= bound
    satisfied: bool
    vacuous: bool

    def to_record(self) -> dict:
        return asdict(self)


def _judge(estimate, stderr, bound, mode, direction):
    slack = MC_SIGMAS * stderr if mode == "mc" else 0.0
    if direction == "le":
        return bool(estimate <= bound + slack)
    return bool(estimate >= bound - slack)


def _binomial(hits, R):
    p = hits / R
    return float(p), float(math.sqrt(p * (1.0 - p) / R))


def _stay_probability(system, x, k, below, level, mode, R, seed, budget):
    """P(the first k states all stay below ``level``) (or above, if not ``below``)."""
    if k == 0:
        return 1.0, 0.0
    if mode == "exact":
        alive = np.ones(1, dtype=bool)
        for states, weights in enumerate_layers(system, x, k, budget):
            ok = states < level if below else states > level
            alive = np.repeat(alive, system.n_maps) & ok
        return math.fsum(weights[alive]), 0.0
    alive = np.ones(R, dtype=bool)
    for _, bx, _ in chain.iter_blocks(system, x, k, seed, R=R):
        ok = (bx < level) if below else (bx > level)
        alive &= ok.all(axis=0)
    return _binomial(int(alive.sum()), R)


def verify_escape_bound(
    system: IfsSystem,
    consts: CalibrationConstants,
    n: int,
    side: str = "lower",
    mode: str = "auto",
    *,
    R: int = DEFAULT_MC_R,
    seed: int = 0,
    budget: int = DEFAULT_BUDGET,
) -> list[BoundCheck]:
    """Probability of lingering within eps of an endpoint for the first floor(n^1/4) steps.

    Checked at the innermost admitted start eps (1-delta)^(k/2) and at eps
    (mirrored for the upper side) against (1-delta)^(alpha k/2).
    """
    if side not in ("lower", "upper"):
        raise ValidationError("side must be 'lower' or 'upper'")
    reg = regime(consts, n)
    k = reg.k
    m = resolve_mode(system, k, mode, budget)
    bound = reg.gamma_n
    eps = consts.epsilon
    out = []
    for d in (eps * (1.0 - consts.delta) ** (k / 2), eps):
        if side == "lower":
            x, below, level = d, True, eps
        else:
            x, below, level = 1.0 - d, False, 1.0 - eps
        est, se = _stay_probability(system, x, k, below, level, m, R, seed, budget)
        out.append(
            BoundCheck(
                lemma=f"escape-{side}",
                n=int(n),
                k=k,
                x=float(x),
                mode=m,
                estimate=est,
                stderr=se,
                bound=bound,
                direction="le",
                satisfied=_judge(est, se, bound, m, "le"),
                vacuous=bool(bound >= 1.0),
            )
        )
    return out


def verify_boundary_mass(
    system: IfsSystem,
    consts: CalibrationConstants,
    n: int,
    k: int,
    x: float,
    mode: str = "auto",
    *,
    side: str = "lower",
    R: int = DEFAULT_MC_R,
    seed: int = 0,
    budget: int = DEFAULT_BUDGET,
) -> BoundCheck:
    """P(f^k(x) < eps_n) against 2 M gamma_n for x in [eps_n, 1] (mirrored for ``side='upper'``)."""
    reg = regime(consts, n)
    if k < reg.k:
        raise ValidationError(f"k must be at least floor(n^1/4) = {reg.k}")
    if side == "lower" and not reg.eps_n <= x <= 1.0:
        raise ValidationError(f"x must lie in [eps_n, 1] = [{reg.eps_n:.6g}, 1]")
    if side == "upper" and not 0.0 <= x <= 1.0 - reg.eps_n:
        raise ValidationError(f"x must lie in [0, 1 - eps_n] = [0, {1 - reg.eps_n:.6g}]")
    m = resolve_mode(system, k, mode, budget)
    bound = 2.0 * consts.M * reg.gamma_n

    def hit(s):
        return s < reg.eps_n if side == "lower" else s > 1.0 - reg.eps_n

    if k == 0:
        est, se = float(hit(np.float64(x))), 0.0
    elif m == "exact":
        for states, weights in enumerate_layers(system, x, k, budget):
            pass
        est, se = math.fsum(weights[hit(states)]), 0.0
    else:
        est, se = _binomial(int(hit(chain.terminal_states(system, x, k, seed, R=R)).sum()), R)
    return BoundCheck(
        lemma=f"boundary-mass-{side}",
        n=int(n),
        k=int(k),
        x=float(x),
        mode=m,
        estimate=est,
        stderr=se,
        bound=bound,
        direction="le",
        satisfied=_judge(est, se, bound, m, "le"),
        vacuous=bool(bound >= 1.0),
    )


def verify_return_probability(
    system: IfsSystem,
    consts: CalibrationConstants,
    a: float,
    n: int,
    mode: str = "auto",
    *,
    R: int = DEFAULT_MC_R,
    seed: int = 0,
    budget: int = DEFAULT_BUDGET,
) -> BoundCheck:
    """P(f^k([eps_n, 1 - eps_n]) inside [a, 1 - a]) against the lower bound 1/5.

    Maps are increasing, so the image interval lies between the images of its
    endpoints and only the two endpoints are followed (under a shared word).
    """
    if not 0.0 < a < 0.5:
        raise ValidationError("a must lie in (0, 1/2)")
    limit = a**-consts.alpha / 6.0
    if not consts.M < limit:
        raise ValidationError(f"need M < a^-alpha / 6: M = {consts.M:.6g}, a^-alpha / 6 = {limit:.6g}")
    reg = regime(consts, n)
    k = reg.k
    bound = 0.2
    if reg.eps_n >= 0.5:
        return BoundCheck("return", int(n), k, reg.eps_n, "none", math.nan, 0.0, bound, "ge", True, True)
    m = resolve_mode(system, k, mode, budget)
    lo, hi = reg.eps_n, 1.0 - reg.eps_n
    if m == "exact":
        for sl, weights in enumerate_layers(system, lo, k, budget):
            pass
        for sh, _ in enumerate_layers(system, hi, k, budget):
            pass
        est, se = math.fsum(weights[(sl >= a) & (sh <= 1.0 - a)]), 0.0
    else:
        xl = chain.terminal_states(system, lo, k, seed, R=R)
        xh = chain.terminal_states(system, hi, k, seed, R=R)
        est, se = _binomial(int(((xl >= a) & (xh <= 1.0 - a)).sum()), R)
    return BoundCheck(
        lemma="return",
        n=int(n),
        k=k,
        x=float(lo),
        mode=m,
        estimate=est,
        stderr=se,
        bound=bound,
        direction="ge",
        satisfied=_judge(est, se, bound, m, "ge"),
        vacuous=False,
    )


def escape_ladder(system, consts, k_max: int, side="lower", mode="exact", budget=DEFAULT_BUDGET):
    """Escape checks at n = k^4 for k = 1..k_max (the smallest n with each k)."""
    out = []
    for k in range(1, k_max + 1):
        n = k**4
        assert quartic_floor(n) == k
        out.extend(verify_escape_bound(system, consts, n, side, mode, budget=budget))
    return out
