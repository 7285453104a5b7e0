"""Self-similar vacuum-interface solutions of the isentropic Euler equations."""

from .builder import BuildError, Regime, SimilaritySolution, build, classify_regime, critical_machs
from .core import ParameterError, Params, PhasePoint, critical_points, derive
from .reconstruct import FlowEvaluator, eval_flow, fit_decay_exponent, sample_flow

__all__ = [
    "BuildError",
    "FlowEvaluator",
    "ParameterError",
    "Params",
    "PhasePoint",
    "Regime",
    "SimilaritySolution",
    "build",
    "classify_regime",
    "critical_machs",
    "critical_points",
    "derive",
    "eval_flow",
    "fit_decay_exponent",
    "sample_flow",
]
