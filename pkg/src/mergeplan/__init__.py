"""Longitudinal motion planning over combinatorial maneuver alternatives.

Plans lead/yield trajectories at an uncontrolled intersection, propagates
prediction uncertainty as truncated Gaussians, prices collision
probability into the optimization cost, and can postpone the maneuver
decision by jointly optimizing both alternatives with a shared prefix.
"""

from .decision import Decision, DecisionThresholds
from .estimation import ManeuverBelief
from .optimizer import CombinatorialLayout, OptimizationResult, ResidualWeights
from .planner import PlanRequest, PlanResult
from .prediction import (
    GaussianState,
    GaussianTrajectory,
    IdmParams,
    ManeuverHypothesisSet,
    NoiseParams,
)
from .simulator import ScenarioConfig, SimLogRow, run
from .world import FieldOfView, MergeGeometry, RoutePath, VehicleState

__all__ = [
    "Decision",
    "DecisionThresholds",
    "ManeuverBelief",
    "CombinatorialLayout",
    "OptimizationResult",
    "ResidualWeights",
    "PlanRequest",
    "PlanResult",
    "GaussianState",
    "GaussianTrajectory",
    "IdmParams",
    "ManeuverHypothesisSet",
    "NoiseParams",
    "ScenarioConfig",
    "SimLogRow",
    "run",
    "FieldOfView",
    "MergeGeometry",
    "RoutePath",
    "VehicleState",
]
