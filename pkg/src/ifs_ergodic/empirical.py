"""Finitely supported probability measures on [0, 1] and the W1 distance between them."""

from __future__ import annotations

import math

import numpy as np

from .errors import ValidationError


class EmpiricalMeasure:
    """Weighted atoms, sorted by location. Repeated locations are allowed."""

    __slots__ = ("points", "weights")

    def __init__(self, points, weights=None, *, check=True):
        pts = np.asarray(points, dtype=float).ravel()
        if weights is None:
            wts = np.full(pts.size, 1.0 / pts.size) if pts.size else np.empty(0)
        else:
            wts = np.asarray(weights, dtype=float).ravel()
        if wts.shape != pts.shape:
            raise ValidationError("points and weights differ in length")
        if check and pts.size:
            if not (np.all(pts >= 0.0) and np.all(pts <= 1.0)):
                raise ValidationError("atoms must lie in [0, 1]")
            if not np.all(wts > 0):
                raise ValidationError("atom weights must be positive")
            total = math.fsum(wts)
            if abs(total - 1.0) > 1e-12:
                raise ValidationError(f"atom weights sum to {total!r}, not 1")
        order = np.argsort(pts, kind="stable")
        self.points = pts[order]
        self.weights = wts[order]
        self.points.setflags(write=False)
        self.weights.setflags(write=False)

    @classmethod
    def empty(cls) -> EmpiricalMeasure:
        return cls(np.empty(0), np.empty(0))

    @classmethod
    def dirac(cls, x: float) -> EmpiricalMeasure:
        return cls([x], [1.0])

    @property
    def size(self) -> int:
        return self.points.size

    @property
    def mass(self) -> float:
        return math.fsum(self.weights)

    def mean(self, phi=None) -> float:
        vals = self.points if phi is None else np.asarray(phi(self.points), dtype=float)
        return math.fsum(self.weights * vals)

    def cdf(self, x):
        return empirical_cdf(self, x)

    def __repr__(self):
        return f"EmpiricalMeasure(size={self.size})"


def empirical_cdf(mu: EmpiricalMeasure, x):
    """Right-continuous CDF ``mu([0, x])``."""
    cw = np.concatenate([[0.0], np.cumsum(mu.weights)])
    if mu.size:
        cw[-1] = mu.mass
    idx = np.searchsorted(mu.points, x, side="right")
    out = cw[idx]
    if np.ndim(x) == 0:
        xf = float(x)
        return 1.0 if xf >= 1.0 and mu.size else float(out)
    out = np.array(out, dtype=float)
    if mu.size:
        out[np.asarray(x) >= 1.0] = 1.0
    return out


def wasserstein1(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
    """Area between the two step CDFs, integrated exactly over the merged breakpoints."""
    if mu.size == 0 or nu.size == 0:
        raise ValidationError("W1 needs two nonempty measures")
    grid = np.union1d(mu.points, nu.points)
    if grid.size < 2:
        return 0.0
    Fm = np.cumsum(mu.weights)[np.searchsorted(mu.points, grid, side="right") - 1]
    Fn = np.cumsum(nu.weights)[np.searchsorted(nu.points, grid, side="right") - 1]
    # CDFs are zero left of their first atom
    Fm[grid < mu.points[0]] = 0.0
    Fn[grid < nu.points[0]] = 0.0
    return math.fsum(np.abs(Fm[:-1] - Fn[:-1]) * np.diff(grid))
