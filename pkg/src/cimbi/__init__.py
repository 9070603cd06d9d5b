"""Simulation and boundary-classification tools for continuous-state interacting
multi-type branching processes with immigration."""

__version__ = "0.1.0"

from .model import (InteractionRegime, JumpMeasure, ModelSpec, ValidationReport, drift, gamma,
                    interaction_regime, measure_moment, validate)
from .engine import NumericalFailure, PathConfig, PathResult, simulate_batch, simulate_path
from .rng import RandomStream
from .conditions import (ConditionReport, RegimeReport, SignMode, Tri, TriState, Verdict, classify,
                         is_copositive, is_negative_definite)
from .montecarlo import Estimate

__all__ = [
    "ConditionReport", "Estimate", "InteractionRegime", "JumpMeasure", "ModelSpec", "NumericalFailure",
    "PathConfig", "PathResult", "RandomStream", "RegimeReport", "SignMode", "Tri", "TriState",
    "ValidationReport", "Verdict", "classify", "drift", "gamma", "interaction_regime", "is_copositive",
    "is_negative_definite", "measure_moment", "simulate_batch", "simulate_path", "validate",
]
