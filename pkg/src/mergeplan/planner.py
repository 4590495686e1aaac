"""Per-cycle plan construction over the maneuver alternatives.

Each replanning cycle builds collision fields from the other vehicle's
hypothesis components (mapped into ego path coordinates through the merge
geometry), computes the latest feasible branch time from the prediction,
and optimizes the requested branch-time variants. The ego-lead branch is
priced against the other vehicle's yield component, the ego-yield branch
against its drive component.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import world
from .errors import FatalPlanningError, PlanningError
from .optimizer import (
    CollisionField,
    CombinatorialLayout,
    CostAssembly,
    OptimizationResult,
    ResidualWeights,
    build_layout,
    minimize,
)
from .prediction import DRIVE, YIELD, GaussianTrajectory, ManeuverHypothesisSet

LEAD = "lead"


@dataclass
class PlanRequest:
    """Inputs of one planning cycle.

    pinned holds the committed support points x_0..x_pin; t_pin is
    pin_index * dt. tc_candidates are branch times relative to the cycle
    start and must lie in [t_pin, t_o).
    """

    pinned: np.ndarray
    ego_v: float
    weights: ResidualWeights
    n_points: int = 37
    dt: float = 0.25
    pin_index: int = 1
    hypotheses: ManeuverHypothesisSet | None = None
    s_merge_ego: float | None = None
    s_merge_other: float | None = None
    tc_candidates: tuple[float, ...] = (0.25, 0.5)
    conflict_margin: float = 0.0
    stop_standoff: float = 2.0
    lead_clearance: float = 4.0
    eps_init: float = 0.5
    ego_a_max: float = 2.0
    ego_b_hard: float = 8.0
    use_mixture_weights: bool = False
    gtol: float = 1e-8
    max_iter: int = 200
    lbfgs_memory: int = 10

    def __post_init__(self) -> None:
        self.pinned = np.asarray(self.pinned, dtype=float)
        if len(self.pinned) != self.pin_index + 1:
            raise ValueError("pinned must hold pin_index + 1 points")
        if self.n_points < 4:
            raise ValueError("horizon too short")
        if not (0 <= self.pin_index <= self.n_points - 2):
            raise ValueError("pin_index out of range")

    @property
    def t_pin(self) -> float:
        return self.pin_index * self.dt


@dataclass
class PlanResult:
    """Optimized trajectories of one variant with per-branch metrics."""

    variant: str  # "straight" or "combinatorial"
    t_c: float | None
    trajectories: dict[str, np.ndarray]
    ride_costs: dict[str, float]
    peak_collision: dict[str, float]
    total_cost: float
    converged: bool
    t_o: float | None = None
    layout: CombinatorialLayout | None = None
    optimization: OptimizationResult | None = None
    fields: dict[str, CollisionField | None] = dc_field(default_factory=dict)


@dataclass
class PlanCycleResult:
    results: list[PlanResult]
    errors: dict[float, str]


def compute_t_o(hypotheses: ManeuverHypothesisSet, s_merge: float) -> float:
    """Earliest mean crossing time over the hypothesis components."""
    if not hypotheses.components:
        raise ValueError("empty hypothesis set")
    return min(world.time_to_merge_mean(traj, s_merge) for _, traj in hypotheses.components)


def make_collision_field(
    component: GaussianTrajectory,
    s_merge_ego: float,
    s_merge_other: float,
    conflict_margin: float,
    weight: float = 1.0,
) -> CollisionField:
    """Map a hypothesis component into ego path coordinates.

    Positions past the merge begin are shared between the routes, so the
    component is shifted by the difference of the merge arclengths. The
    conflict zone starts conflict_margin before the ego merge point.
    """
    shift = s_merge_ego - s_merge_other
    return CollisionField(
        mu=component.mu + shift,
        sigma=np.maximum(component.sigma, 1e-9),
        lower=component.lower + shift,
        upper=component.upper + shift,
        conflict_begin=s_merge_ego - conflict_margin,
        weight=weight,
    )


def collision_probability_profile(x: np.ndarray, field: CollisionField | None) -> np.ndarray:
    """Gated unweighted collision term per support point (point 0 is 0)."""
    x = np.asarray(x, dtype=float)
    out = np.zeros(len(x))
    if field is None or len(x) < 2:
        return out
    steps = np.arange(len(x) - 1)
    out[1:] = field.term(x[1:], steps)
    return out


def _ride_cost(traj: np.ndarray, weights: ResidualWeights, dt: float) -> float:
    return CostAssembly(len(traj), dt, weights).cost(traj)


def _pin_speed(request: PlanRequest) -> float:
    if request.pin_index >= 1:
        return float((request.pinned[-1] - request.pinned[-2]) / request.dt)
    return float(request.ego_v)


def _base_profile(request: PlanRequest, accel: float = 1.0) -> np.ndarray:
    """Speed-recovery profile: ramp from the committed speed to the desired one."""
    n, dt = request.n_points, request.dt
    x = np.empty(n)
    x[: request.pin_index + 1] = request.pinned
    v = _pin_speed(request)
    v_des = request.weights.v_desired
    for k in range(request.pin_index + 1, n):
        dv = np.clip(v_des - v, -accel * dt, accel * dt)
        v = max(v + dv, 0.0)
        x[k] = x[k - 1] + v * dt
    return x

def _clearance_step(field: CollisionField | None, n_points: int) -> int:
    """First support point k from which the paired component has cleared the
    conflict begin by three standard deviations; n_points when it never does.

    Seeding the resume on the safe side keeps partially converged yield
    branches below the risk threshold. With a fresh, wide track the
    3-sigma clearance can leave the horizon entirely, so it is capped at
    two seconds past the mean crossing.
    """
    if field is None:
        return 0
    cleared = field.mu[: n_points - 1] - 3.0 * field.sigma[: n_points - 1] > field.conflict_begin
    idx = np.nonzero(cleared)[0]
    k_3sigma = int(idx[0]) + 1 if len(idx) else n_points
    mean_cleared = np.nonzero(field.mu[: n_points - 1] > field.conflict_begin)[0]
    if len(mean_cleared):
        return min(k_3sigma, int(mean_cleared[0]) + 1 + 8)
    return k_3sigma


def _yield_block_bounds(
    request: PlanRequest,
    layout: CombinatorialLayout | None,
    field: CollisionField | None,
) -> list[tuple[float | None, float | None] | None] | None:
    """Hard upper bounds keeping the yield branch behind the conflict begin
    while the paired component's mean has not yet passed the merge point.

    The pointwise collision term is blind to a trajectory slipping through
    just before the other vehicle arrives; this bound pins the yield
    homotopy class to "cross after".
    """
    if field is None or request.s_merge_ego is None:
        return None
    n = request.n_points
    n_params = layout.n_params if layout is not None else n
    ymap = layout.yield_map if layout is not None else np.arange(n)
    first_free = (layout.tc_index if layout is not None else request.pin_index) + 1
    line = request.s_merge_ego - request.conflict_margin - request.stop_standoff
    blocked = field.mu <= request.s_merge_ego
    bounds: list[tuple[float | None, float | None] | None] = [None] * n_params
    any_blocked = False
    for k in range(first_free, n):
        if k - 1 < len(blocked) and blocked[k - 1]:
            bounds[int(ymap[k])] = (None, line)
            any_blocked = True
    return bounds if any_blocked else None


def _yield_seed(
    request: PlanRequest,
    base: np.ndarray,
    branch_index: int,
    field: CollisionField | None,
    deferred: bool = False,
) -> np.ndarray:
    """Yield-branch seed: approach the stop line, hold, resume once the
    paired component has cleared the conflict begin.

    The commit-now shape brakes immediately at the decel that reaches the
    stop line; the deferred shape holds the current speed and brakes as
    late as a comfortable deceleration allows, reflecting the premise of a
    postponed decision.
    """
    n, dt = request.n_points, request.dt
    stop_at = (request.s_merge_ego - request.conflict_margin
               - request.stop_standoff - request.eps_init)
    k_resume = _clearance_step(field, n)
    x = base.copy()
    v = (base[branch_index] - base[branch_index - 1]) / dt if branch_index >= 1 else _pin_speed(request)
    v = max(v, 0.0)
    pos = base[branch_index]
    room = stop_at - pos
    comfort = min(-request.weights.a_range[0], request.ego_b_hard)
    if room <= 0.0:
        decel = request.ego_b_hard
    elif deferred:
        decel = comfort
    else:
        decel = min(v * v / (2.0 * room), request.ego_b_hard)
    v_des = request.weights.v_desired
    for k in range(branch_index + 1, n):
        if k < k_resume:
            braking = True
            if deferred and room > 0.0:
                # hold speed while a comfort-decel stop still fits
                braking = stop_at - pos <= v * v / (2.0 * comfort) + v * dt
            if braking:
                v = max(v - decel * dt, 0.0)
            pos = min(pos + v * dt, stop_at) if room > 0.0 else pos
        else:
            v = min(v + request.ego_a_max * dt, v_des)
            pos = pos + v * dt
        x[k] = pos
    return x


def _paired_fields(request: PlanRequest) -> dict[str, CollisionField | None]:
    """Branch -> collision field pairing: lead vs other-yield, yield vs other-drive."""
    hyp = request.hypotheses
    fields: dict[str, CollisionField | None] = {LEAD: None, YIELD: None}
    if hyp is None:
        return fields
    if request.s_merge_ego is None or request.s_merge_other is None:
        raise ValueError("merge geometry required when hypotheses are given")
    pairing = {LEAD: YIELD, YIELD: DRIVE}
    for branch, comp_label in pairing.items():
        comp = hyp.component(comp_label)
        if comp is None:
            continue
        weight = hyp.weight(comp_label) if request.use_mixture_weights else 1.0
        fields[branch] = make_collision_field(
            comp,
            request.s_merge_ego,
            request.s_merge_other,
            request.conflict_margin,
            weight,
        )
    return fields


def plan_straight(request: PlanRequest, maneuver: str | None = None) -> PlanResult:
    """Single-trajectory optimization.

    Without a maneuver this is free driving (no conflict). With "lead" or
    "yield" a single maneuver alternative is optimized against its paired
    hypothesis component, matching one branch of the combinatorial plan.
    """
    n, dt = request.n_points, request.dt
    key = maneuver or "main"
    fields = _paired_fields(request)
    field = fields.get(maneuver) if maneuver else None
    t_o = None
    if maneuver is not None and request.hypotheses is not None:
        t_o = compute_t_o(request.hypotheses, request.s_merge_other)
    base = _base_profile(request)
    bounds = None
    if maneuver == YIELD:
        x0 = _yield_seed(request, base, request.pin_index, field)
        bounds = _yield_block_bounds(request, None, field)
    else:
        x0 = base
    assembly = CostAssembly(n, dt, request.weights, None, {"main": field})
    result = minimize(
        assembly,
        x0,
        pinned=np.arange(request.pin_index + 1),
        bounds=bounds,
        gtol=request.gtol,
        max_iter=request.max_iter,
        memory=request.lbfgs_memory,
    )
    traj = result.params
    return PlanResult(
        variant="straight",
        t_c=None,
        trajectories={key: traj},
        ride_costs={key: _ride_cost(traj, request.weights, dt)},
        peak_collision={key: float(np.max(collision_probability_profile(traj, field)))},
        total_cost=result.total_cost,
        converged=result.converged,
        t_o=t_o,
        optimization=result,
        fields={key: field},
    )


def plan_combinatorial(
    request: PlanRequest,
    t_c: float,
    t_o: float | None = None,
    warm_start: dict[str, np.ndarray] | None = None,
) -> PlanResult:
    """Joint optimization of both maneuver alternatives sharing a prefix to t_c.

    warm_start may carry the previous cycle's branch trajectories (full
    n_points each, already shifted to the current cycle start); branch
    tails then seed from them instead of the synthetic profiles.
    """
    if request.hypotheses is None:
        raise ValueError("combinatorial planning needs a hypothesis set")
    if t_o is None:
        t_o = compute_t_o(request.hypotheses, request.s_merge_other)
    n, dt = request.n_points, request.dt
    if not (request.t_pin - 1e-9 <= t_c < t_o):
        raise ValueError(f"t_c={t_c:.3f} outside [t_pin={request.t_pin:.3f}, t_o={t_o:.3f})")
    tc_index = int(round(t_c / dt))
    if tc_index > n - 2:
        raise ValueError("t_c too close to the horizon end")
    layout = build_layout(n, tc_index, request.pin_index)
    fields = _paired_fields(request)
    base = _base_profile(request)
    x0 = np.empty(layout.n_params)
    x0[layout.lead_map] = base
    deferred = tc_index > request.pin_index
    yield_full = _yield_seed(request, base, tc_index, fields[YIELD], deferred=deferred)
    x0[layout.yield_indices] = yield_full[tc_index + 1 :]
    if warm_start is not None:
        lead_prev = warm_start.get(LEAD)
        yield_prev = warm_start.get(YIELD)
        if lead_prev is not None and len(lead_prev) == n:
            x0[layout.lead_map] = lead_prev
        if yield_prev is not None and len(yield_prev) == n:
            x0[layout.yield_indices] = yield_prev[tc_index + 1 :]
        x0[: request.pin_index + 1] = request.pinned
    assembly = CostAssembly(n, dt, request.weights, layout, fields)
    result = minimize(
        assembly,
        x0,
        pinned=np.arange(request.pin_index + 1),
        bounds=_yield_block_bounds(request, layout, fields[YIELD]),
        gtol=request.gtol,
        max_iter=request.max_iter,
        memory=request.lbfgs_memory,
    )
    lead_traj = result.params[layout.lead_map]
    yield_traj = result.params[layout.yield_map]
    return PlanResult(
        variant="combinatorial",
        t_c=t_c,
        trajectories={LEAD: lead_traj, YIELD: yield_traj},
        ride_costs={
            LEAD: _ride_cost(lead_traj, request.weights, dt),
            YIELD: _ride_cost(yield_traj, request.weights, dt),
        },
        peak_collision={
            LEAD: float(np.max(collision_probability_profile(lead_traj, fields[LEAD]))),
            YIELD: float(np.max(collision_probability_profile(yield_traj, fields[YIELD]))),
        },
        total_cost=result.total_cost,
        converged=result.converged,
        t_o=t_o,
        layout=layout,
        optimization=result,
        fields=fields,
    )


def plan_cycle(
    request: PlanRequest,
    parallel: bool = True,
    warm_starts: dict[float, dict[str, np.ndarray]] | None = None,
) -> PlanCycleResult:
    """Optimize every branch-time candidate; collect per-variant failures.

    warm_starts maps a branch-time candidate to the previous cycle's
    branch trajectories for that variant. Raises FatalPlanningError only
    when no variant succeeds.
    """
    if request.hypotheses is None:
        raise ValueError("plan_cycle needs a hypothesis set")
    t_o = compute_t_o(request.hypotheses, request.s_merge_other)
    candidates = list(request.tc_candidates)
    results: list[PlanResult | None] = [None] * len(candidates)
    errors: dict[float, str] = {}

    def run_one(i: int, t_c: float) -> None:
        try:
            warm = warm_starts.get(t_c) if warm_starts else None
            results[i] = plan_combinatorial(request, t_c, t_o, warm_start=warm)
        except (PlanningError, ValueError, np.linalg.LinAlgError) as exc:
            errors[t_c] = f"{type(exc).__name__}: {exc}"

    if parallel and len(candidates) > 1:
        with ThreadPoolExecutor(max_workers=len(candidates)) as pool:
            futures = [pool.submit(run_one, i, t_c) for i, t_c in enumerate(candidates)]
            for fut in futures:
                fut.result()
    else:
        for i, t_c in enumerate(candidates):
            run_one(i, t_c)
    ok = [r for r in results if r is not None]
    if not ok:
        raise FatalPlanningError(f"all branch-time variants failed: {errors}")
    return PlanCycleResult(ok, errors)
