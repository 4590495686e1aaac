"""Maneuver selection from plan results, belief entropy and risk thresholds.

While the other vehicle's maneuver is unclear (belief entropy above the
threshold) the planner keeps its options open and executes the shared
prefix of the postponed-branch plan. Once the maneuver is clear, the
cheapest alternative whose peak collision probability stays below the
threshold is executed; with no acceptable alternative an emergency stop
is commanded.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .estimation import ManeuverBelief
from .optimizer import CostAssembly, ResidualWeights
from .planner import LEAD, PlanResult, collision_probability_profile
from .prediction import YIELD

NEUTRAL = "neutral"
EMERGENCY = "emergency"
KIND_LEAD = "lead"
KIND_YIELD = "yield"


@dataclass(frozen=True)
class DecisionThresholds:
    entropy_max: float = 0.45  # nats
    p_coll_max: float = 0.05

    def __post_init__(self) -> None:
        if not (0.0 < self.entropy_max <= np.log(2.0) + 1e-12):
            raise ValueError("entropy_max must be in (0, ln 2] for two maneuvers")
        if not (0.0 < self.p_coll_max < 1.0):
            raise ValueError("p_coll_max must be in (0, 1)")


@dataclass
class Decision:
    kind: str  # lead | yield | neutral | emergency
    trajectory: np.ndarray
    rationale: dict = field(default_factory=dict)


def peak_collision_probability(trajectory: np.ndarray, field) -> float:
    """Largest gated truncated-CDF value over the support points."""
    return float(np.max(collision_probability_profile(trajectory, field)))


def ride_cost(trajectory: np.ndarray, weights: ResidualWeights, dt: float) -> float:
    """Residual sum without the collision term: the basis for comparing maneuvers."""
    return CostAssembly(len(trajectory), dt, weights).cost(np.asarray(trajectory, dtype=float))


def emergency_profile(s: float, v: float, b_hard: float, n_points: int, dt: float) -> np.ndarray:
    """Full braking until standstill, then hold.

    Piecewise-constant-deceleration kinematics; the total braking distance
    is exactly v^2 / (2 b_hard).
    """
    if v < 0.0:
        raise ValueError("speed must be non-negative")
    x = np.empty(n_points)
    pos, speed = s, v
    x[0] = pos
    for k in range(1, n_points):
        if speed - b_hard * dt > 0.0:
            pos += speed * dt - b_hard * dt * dt / 2.0
            speed -= b_hard * dt
        else:
            pos += speed * speed / (2.0 * b_hard) if b_hard > 0.0 else 0.0
            speed = 0.0
        x[k] = pos
    return x


def _variant(results: list[PlanResult], t_c: float | None) -> PlanResult | None:
    for r in results:
        if t_c is None or (r.t_c is not None and abs(r.t_c - t_c) < 1e-9):
            return r
    return None


def _shared_prefix_peak(result: PlanResult) -> float:
    """Largest collision term on the shared prefix, the only motion a
    neutral decision actually commits."""
    if result.layout is None:
        return max(result.peak_collision.values(), default=0.0)
    end = result.layout.tc_index + 1
    peak = 0.0
    for branch, traj in result.trajectories.items():
        profile = collision_probability_profile(traj, result.fields.get(branch))
        peak = max(peak, float(np.max(profile[:end])))
    return peak


def select(
    results: list[PlanResult],
    belief: ManeuverBelief,
    thresholds: DecisionThresholds,
    t_pin: float,
    emergency_trajectory: np.ndarray | None = None,
    lead_allowed: bool = True,
) -> Decision:
    """Pick lead, yield, neutral postponement or emergency braking.

    Rule 1: entropy above the threshold postpones the decision with the
    t_c = 2 t_pin plan, provided its shared prefix (the only motion a
    neutral decision commits) is acceptable. Rule 2: otherwise the
    feasible branch of the t_c = t_pin plan with the least ride cost wins
    (tie toward yield); `lead_allowed=False` removes the lead branch from
    consideration, e.g. when it is kinematically out of reach. Rule 3: no
    feasible branch means emergency braking.
    """
    if not results:
        raise ValueError("no plan results to select from")
    rationale = {
        "entropy": belief.entropy,
        "probabilities": dict(belief.probabilities),
        "ride_costs": {},
        "peak_collision": {},
    }
    for r in results:
        tag = f"tc={r.t_c:.2f}" if r.t_c is not None else r.variant
        for branch, cost in r.ride_costs.items():
            rationale["ride_costs"][f"{branch} ({tag})"] = cost
        for branch, prob in r.peak_collision.items():
            rationale["peak_collision"][f"{branch} ({tag})"] = prob

    neutral_plan = _variant(results, 2.0 * t_pin)
    if belief.entropy > thresholds.entropy_max and neutral_plan is not None:
        if _shared_prefix_peak(neutral_plan) <= thresholds.p_coll_max:
            rationale["rule"] = "entropy above threshold: postpone with the shared prefix"
            return Decision(NEUTRAL, neutral_plan.trajectories[LEAD], rationale)

    base_plan = _variant(results, t_pin) or results[0]
    feasible = {
        branch: base_plan.ride_costs[branch]
        for branch in base_plan.trajectories
        if base_plan.peak_collision.get(branch, 0.0) <= thresholds.p_coll_max
        and (lead_allowed or branch != LEAD)
    }
    if feasible:
        # tie toward the yield branch, the conservative class
        order = {YIELD: 0, LEAD: 1}
        chosen = min(feasible, key=lambda b: (feasible[b], order.get(b, 2)))
        rationale["rule"] = "least ride cost among alternatives below the risk threshold"
        kind = KIND_YIELD if chosen == YIELD else KIND_LEAD if chosen == LEAD else chosen
        return Decision(kind, base_plan.trajectories[chosen], rationale)

    rationale["rule"] = "no alternative satisfies the collision threshold"
    traj = emergency_trajectory if emergency_trajectory is not None else np.array([])
    return Decision(EMERGENCY, traj, rationale)
