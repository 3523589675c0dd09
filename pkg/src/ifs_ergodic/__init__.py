"""Simulation and numerical verification for iterated function systems of
increasing piecewise-linear homeomorphisms of [0, 1]."""

from .chain import StreamSpec, Trajectory, burn_in_sample, run_coupled_pair, run_ensemble, run_trajectory, sample_symbols
from .core import (
    AdmissibilityReport,
    BoundRegime,
    CalibrationConstants,
    IfsSystem,
    PiecewiseLinearMap,
    am2,
    calibrate,
    check_admissible,
    dual_apply_exact,
    endpoint_slopes,
    eval_inverse,
    eval_map,
    markov_step_atoms,
    regime,
    word_apply,
)
from .empirical import EmpiricalMeasure, empirical_cdf, wasserstein1
from .errors import BudgetExceeded, CalibrationInfeasible, IfsError, InvariantBreach, ValidationError

__version__ = "0.1.0"
