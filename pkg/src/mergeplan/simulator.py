"""Closed-loop simulation of two vehicles at an uncontrolled intersection.

The ego vehicle replans every cycle: perceive the other vehicle inside the
field of view, update the Kalman track, estimate the maneuver belief from
the executed motion, plan (straight while no conflict is visible,
otherwise both branch-time variants), select a maneuver and execute the
first segment after the pinned prefix. The other vehicle follows its
scripted intention with IDM control.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import decision as decision_mod
from . import estimation, planner, prediction, world
from .decision import DecisionThresholds
from .errors import DegenerateHypothesisError, FatalPlanningError
from .optimizer import ResidualWeights
from .planner import LEAD, PlanRequest
from .prediction import (
    DRIVE,
    YIELD,
    GaussianState,
    IdmParams,
    NoiseParams,
    PredictionScene,
    idm_acceleration,
    kalman_predict,
    kalman_update,
    predict_maneuver,
)
from .world import FieldOfView, RoutePath, VehicleState


@dataclass
class VehicleConfig:
    s: float
    v: float
    a: float = 0.0


@dataclass
class OtherVehicleConfig(VehicleConfig):
    intention: str = DRIVE  # scripted: drive | yield
    reveal_time: float = 0.0
    idm: IdmParams = dc_field(default_factory=IdmParams)
    b_hard: float = 8.0


@dataclass
class EgoConfig(VehicleConfig):
    v_desired: float = 8.0
    a_max: float = 2.0
    b_hard: float = 8.0


@dataclass
class ScenarioConfig:
    """Full description of a closed-loop run; JSON-round-trippable."""

    route_ego: RoutePath
    route_other: RoutePath
    s_merge_ego: float
    s_merge_other: float
    ego: EgoConfig
    other: OtherVehicleConfig
    fov: FieldOfView = dc_field(default_factory=lambda: FieldOfView(210.0, 40.0))
    noise: NoiseParams = dc_field(default_factory=NoiseParams)
    p0_diag: tuple[float, float, float] = (0.25, 0.25, 0.25)
    weights: ResidualWeights = dc_field(default_factory=ResidualWeights)
    thresholds: DecisionThresholds = dc_field(default_factory=DecisionThresholds)
    n_points: int = 37
    dt: float = 0.25
    pin_index: int = 1
    tc_factors: tuple[float, ...] = (1.0, 2.0)
    history_window: int = 8
    inverse_weighting: bool = True
    conflict_margin: float = 0.0
    stop_standoff: float = 2.0
    lead_clearance: float = 4.0
    eps_init: float = 0.5
    max_stop_decel: float = 6.0
    warm_start: bool = False
    use_mixture_weights: bool = False
    gtol: float = 1e-8
    max_iter: int = 200
    lbfgs_memory: int = 10
    seed: int = 0
    duration: float = 12.0
    clear_distance: float = 5.0

    @classmethod
    def from_dict(cls, raw: dict) -> "ScenarioConfig":
        routes = raw["routes"]
        merge = raw["merge"]
        ego_raw = dict(raw["ego"])
        other_raw = dict(raw["other"])
        idm = IdmParams(**other_raw.pop("idm", {}))
        noise_raw = raw.get("noise", {})
        horizon = raw.get("horizon", {})
        plan_raw = raw.get("planner", {})
        est_raw = raw.get("estimation", {})
        sim_raw = raw.get("sim", {})
        route_ego = RoutePath("ego", np.asarray(routes["ego"]["points"], dtype=float))
        route_other = RoutePath("other", np.asarray(routes["other"]["points"], dtype=float))
        geometry = world.MergeGeometry(
            "ego", "other", float(merge["s_merge_ego"]), float(merge["s_merge_other"])
        )
        geometry.validate(route_ego, route_other)
        return cls(
            route_ego=route_ego,
            route_other=route_other,
            s_merge_ego=geometry.s_merge_a,
            s_merge_other=geometry.s_merge_b,
            ego=EgoConfig(**ego_raw),
            other=OtherVehicleConfig(idm=idm, **other_raw),
            fov=FieldOfView(**raw.get("fov", {"angular_extent": 210.0, "range": 40.0})),
            noise=NoiseParams(
                sigma_a_sq=noise_raw.get("sigma_a_sq", 0.2),
                R=np.diag(noise_raw.get("r_diag", [0.04, 0.04])),
            ),
            p0_diag=tuple(noise_raw.get("p0_diag", (0.25, 0.25, 0.25))),
            weights=ResidualWeights(**{
                k: tuple(v) if isinstance(v, list) else v
                for k, v in raw.get("weights", {}).items()
            }),
            thresholds=DecisionThresholds(**raw.get("thresholds", {})),
            n_points=horizon.get("n_points", 37),
            dt=horizon.get("dt", 0.25),
            pin_index=horizon.get("pin_index", 1),
            tc_factors=tuple(horizon.get("tc_factors", (1.0, 2.0))),
            history_window=est_raw.get("window", 8),
            inverse_weighting=est_raw.get("inverse_weighting", True),
            conflict_margin=plan_raw.get("conflict_margin", 0.0),
            stop_standoff=plan_raw.get("stop_standoff", 2.0),
            lead_clearance=plan_raw.get("lead_clearance", 4.0),
            eps_init=plan_raw.get("eps_init", 0.5),
            max_stop_decel=plan_raw.get("max_stop_decel", 6.0),
            warm_start=plan_raw.get("warm_start", False),
            use_mixture_weights=plan_raw.get("use_mixture_weights", False),
            gtol=plan_raw.get("gtol", 1e-8),
            max_iter=plan_raw.get("max_iter", 200),
            lbfgs_memory=plan_raw.get("lbfgs_memory", 10),
            seed=sim_raw.get("seed", 0),
            duration=sim_raw.get("duration", 12.0),
            clear_distance=sim_raw.get("clear_distance", 5.0),
        )


@dataclass
class SimLogRow:
    """One results-table line: a planned alternative at a timestamp."""

    timestamp: float
    alternative: str  # "-", "lead (t_pin)", "lead (2t_pin)", "follow (t_pin)", ...
    collision_probability: float | None
    cost: float
    decision: str


@dataclass
class SimOutput:
    rows: list[SimLogRow]
    profiles: list[dict]
    pathtime: list[dict]
    ego_trace: list[tuple[float, float, float, float]]
    other_trace: list[tuple[float, float, float, float]]
    decisions: list[tuple[float, str]]
    aborted: str | None = None


def step_other_vehicle(
    state: VehicleState,
    intention: str,
    t: float,
    cfg: ScenarioConfig,
) -> VehicleState:
    """Advance the scripted other vehicle one step with IDM control."""
    p = cfg.other.idm
    yielding = (
        intention == YIELD
        and t >= cfg.other.reveal_time
        and state.s < cfg.s_merge_other
    )
    if yielding:
        gap = cfg.s_merge_other - state.s
        a = idm_acceleration(state.v, gap, 0.0, p, cfg.other.b_hard)
    else:
        a = idm_acceleration(state.v, math.inf, 0.0, p, cfg.other.b_hard)
    dt = cfg.dt
    v_next = state.v + a * dt
    if v_next < 0.0:
        # stops inside the step; no reversing
        t_stop = state.v / max(-a, 1e-12)
        s_next = state.s + state.v * t_stop + a * t_stop * t_stop / 2.0
        v_next = 0.0
    else:
        s_next = state.s + state.v * dt + a * dt * dt / 2.0
    return VehicleState(state.route, s_next, v_next, a, t + dt)


def perceive(
    observer: VehicleState,
    target: VehicleState,
    fov: FieldOfView,
    noise: NoiseParams,
    rng: np.random.Generator,
) -> np.ndarray | None:
    """Noisy [position, speed] measurement iff the target is visible."""
    if not world.in_field_of_view(observer, fov, target):
        return None
    z = np.array([target.s, target.v])
    w, v = np.linalg.eigh(noise.R)
    z = z + v @ (np.sqrt(np.clip(w, 0.0, None)) * rng.standard_normal(2))
    return z


def _refresh_pose(state: VehicleState, route: RoutePath) -> None:
    state.pose_2d = world.project(route, min(max(state.s, 0.0), route.length))


def _alt_label(branch: str, t_c: float, t_pin: float) -> str:
    name = "lead" if branch == LEAD else "follow"
    if abs(t_c - t_pin) < 1e-9:
        return f"{name} (t_pin)"
    if abs(t_c - 2.0 * t_pin) < 1e-9:
        return f"{name} (2t_pin)"
    return f"{name} (tc={t_c:.2f})"


def _profile_rows(stamp: float, alternative: str, traj: np.ndarray, dt: float) -> list[dict]:
    n = len(traj)
    v = np.diff(traj) / dt
    acc = np.diff(traj, n=2) / dt**2
    jrk = np.diff(traj, n=3) / dt**3
    rows = []
    for k in range(n):
        rows.append(
            {
                "cycle_t": stamp,
                "alternative": alternative,
                "k": k,
                "t": stamp + k * dt,
                "s": float(traj[k]),
                "v": float(v[k]) if k < len(v) else None,
                "a": float(acc[k]) if k < len(acc) else None,
                "j": float(jrk[k]) if k < len(jrk) else None,
            }
        )
    return rows


class _Estimator:
    """Aligned rolling windows of executed vs hypothesis-predicted positions."""

    def __init__(self, window: int, inverse_weighting: bool, dt: float) -> None:
        self.window = window
        self.inverse_weighting = inverse_weighting
        self.dt = dt
        self.executed = estimation.ExecutionHistory(window)
        self.pred_yield: deque = deque(maxlen=window)
        self.pred_drive: deque = deque(maxlen=window)
        self.pending: dict[str, float] | None = None

    def observe(self, posterior_x: float, t: float) -> None:
        if self.pending is not None:
            if len(self.executed) and abs(t - self.executed.timestamps[-1] - self.dt) > 1e-9:
                # the comparison window must be contiguous; restart after a gap
                self.executed = estimation.ExecutionHistory(self.window)
                self.pred_yield.clear()
                self.pred_drive.clear()
            self.executed.append(posterior_x, t)
            self.pred_yield.append(self.pending[YIELD])
            self.pred_drive.append(self.pending[DRIVE])
            self.pending = None

    def stage(self, one_step_means: dict[str, float]) -> None:
        self.pending = one_step_means

    def reset_pending(self) -> None:
        self.pending = None

    def belief(self) -> estimation.ManeuverBelief:
        # single-sample dissimilarities are dominated by measurement noise;
        # stay uniform until the comparison window is filled
        if len(self.executed) < self.window:
            probs = {YIELD: 0.5, DRIVE: 0.5}
            return estimation.ManeuverBelief(probs, estimation.entropy(probs.values()))
        executed = self.executed.as_array()
        m_y = estimation.dissimilarity(executed, np.asarray(self.pred_yield))
        m_d = estimation.dissimilarity(executed, np.asarray(self.pred_drive))
        return estimation.maneuver_probabilities(m_y, m_d, self.inverse_weighting)


def run(config: ScenarioConfig) -> SimOutput:
    """Execute the closed loop and collect the results table and traces."""
    rng = np.random.default_rng(config.seed)
    dt = config.dt
    n = config.n_points
    t_pin = config.pin_index * dt

    ego = VehicleState("ego", config.ego.s, config.ego.v, config.ego.a, 0.0)
    other = VehicleState("other", config.other.s, config.other.v, config.other.a, 0.0)
    track: GaussianState | None = None
    est = _Estimator(config.history_window, config.inverse_weighting, dt)
    committed_next = ego.s + ego.v * dt + config.ego.a * dt * dt / 2.0

    rows: list[SimLogRow] = []
    profiles: list[dict] = []
    pathtime: list[dict] = []
    ego_trace: list[tuple[float, float, float, float]] = []
    other_trace: list[tuple[float, float, float, float]] = []
    decisions: list[tuple[float, str]] = []
    aborted: str | None = None

    scene_other = PredictionScene(s_merge=config.s_merge_other)
    n_cycles = int(round(config.duration / dt))
    warm_state: dict[float, dict[str, np.ndarray]] = {}

    def _shift(traj: np.ndarray) -> np.ndarray:
        # previous solution advanced one step; constant-speed tail
        return np.concatenate((traj[1:], [2.0 * traj[-1] - traj[-2]]))

    for cycle in range(n_cycles):
        t = cycle * dt
        _refresh_pose(ego, config.route_ego)
        _refresh_pose(other, config.route_other)
        ego_trace.append((t, ego.s, ego.v, ego.a))
        other_trace.append((t, other.s, other.v, other.a))

        z = perceive(ego, other, config.fov, config.noise, rng)
        if track is not None:
            track = kalman_predict(track, 0.0, dt, config.noise)
            if z is not None:
                track = kalman_update(track, z, config.noise)
        elif z is not None:
            track = GaussianState(np.array([z[0], z[1], 0.0]), np.diag(config.p0_diag))

        conflict_active = (
            track is not None
            and other.s < config.s_merge_other + config.clear_distance
            and ego.s < config.s_merge_ego + config.clear_distance
        )

        pinned = np.array([ego.s, committed_next]) if config.pin_index == 1 else None
        if pinned is None:
            raise ValueError("only pin_index=1 execution is wired into the simulator")
        request = PlanRequest(
            pinned=pinned,
            ego_v=ego.v,
            weights=config.weights,
            n_points=n,
            dt=dt,
            pin_index=config.pin_index,
            hypotheses=None,
            s_merge_ego=config.s_merge_ego,
            s_merge_other=config.s_merge_other,
            tc_candidates=tuple(f * t_pin for f in config.tc_factors),
            conflict_margin=config.conflict_margin,
            stop_standoff=config.stop_standoff,
            lead_clearance=config.lead_clearance,
            eps_init=config.eps_init,
            ego_a_max=config.ego.a_max,
            ego_b_hard=config.ego.b_hard,
            use_mixture_weights=config.use_mixture_weights,
            gtol=config.gtol,
            max_iter=config.max_iter,
            lbfgs_memory=config.lbfgs_memory,
        )

        chosen_kind = "-"
        chosen_traj: np.ndarray | None = None
        cycle_pathtime: dict = {"t": t, "variants": [], "hypotheses": []}

        if not conflict_active:
            warm_state = {}
            est.reset_pending()
            result = planner.plan_straight(request)
            traj = result.trajectories["main"]
            cost = result.ride_costs["main"]
            rows.append(SimLogRow(t, "-", None, cost, "-"))
            profiles.extend(_profile_rows(t, "-", traj, dt))
            cycle_pathtime["variants"].append(
                {"t_c": None, "main": [float(s) for s in traj]}
            )
            chosen_traj = traj
        else:
            est.observe(float(track.mean[0]), t)
            drive_traj = predict_maneuver(
                track, DRIVE, scene_other, config.other.idm, config.noise,
                n - 1, dt, config.other.b_hard,
            )
            yield_traj: prediction.GaussianTrajectory | None
            try:
                yield_traj = predict_maneuver(
                    track, YIELD, scene_other, config.other.idm, config.noise,
                    n - 1, dt, config.other.b_hard,
                )
            except (DegenerateHypothesisError, ValueError):
                yield_traj = None

            if yield_traj is None:
                belief = estimation.ManeuverBelief({YIELD: 0.0, DRIVE: 1.0}, 0.0)
                est.reset_pending()
                predictions = {DRIVE: drive_traj}
                probs = {DRIVE: 1.0}
            else:
                belief = est.belief()
                est.stage({YIELD: float(yield_traj.mu[0]), DRIVE: float(drive_traj.mu[0])})
                predictions = {DRIVE: drive_traj, YIELD: yield_traj}
                probs = {DRIVE: belief.p(DRIVE), YIELD: belief.p(YIELD)}

            hyp = prediction.build_hypothesis_set(predictions, probs)
            request.hypotheses = hyp
            t_o = planner.compute_t_o(hyp, config.s_merge_other)
            valid_tc = [
                t_c
                for t_c in request.tc_candidates
                if t_pin - 1e-9 <= t_c < t_o and int(round(t_c / dt)) <= n - 2
            ]
            emergency = decision_mod.emergency_profile(
                ego.s, max(ego.v, 0.0), config.ego.b_hard, n, dt
            )

            # ego-side kinematic feasibility of each maneuver class, judged
            # from the end of the committed motion: yielding remains viable
            # while maximal braking can keep ego behind the standoff line for
            # as long as the drive hypothesis still blocks it
            v_pin = max((committed_next - ego.s) / dt, 0.0)
            line = config.s_merge_ego - config.conflict_margin - config.stop_standoff
            shift = config.s_merge_ego - config.s_merge_other
            blocked = np.nonzero(drive_traj.mu + shift <= config.s_merge_ego)[0]
            if len(blocked) == 0:
                yield_feasible = True
            else:
                t_rel = (int(blocked[-1]) + 1) * dt
                b = config.max_stop_decel
                t_stop = v_pin / b if b > 0 else np.inf
                brake_dist = (
                    v_pin * t_rel - b * t_rel * t_rel / 2.0
                    if t_rel < t_stop
                    else v_pin * v_pin / (2.0 * b)
                )
                yield_feasible = committed_next + brake_dist <= line + 0.25
            # beating the drive hypothesis to the merge only matters while
            # that maneuver is still credible; a believed-yielding vehicle
            # is priced through the yield component instead
            horizon_end = (n - 1) * dt
            if belief.p(DRIVE) < 0.5 or t_o >= horizon_end:
                lead_feasible = True
            else:
                t_rel = t_o - t_pin
                dist = config.s_merge_ego + config.lead_clearance - committed_next
                if t_rel <= 0.0:
                    lead_feasible = dist <= 0.0
                else:
                    req = 2.0 * (dist - v_pin * t_rel) / (t_rel * t_rel)
                    lead_feasible = req <= config.ego.a_max + 0.25

            for label, traj_h in hyp.components:
                fld = planner.make_collision_field(
                    traj_h, config.s_merge_ego, config.s_merge_other, config.conflict_margin
                )
                cycle_pathtime["hypotheses"].append(
                    {
                        "label": label,
                        "weight": hyp.weight(label),
                        "mu": [float(m) for m in fld.mu],
                        "sigma": [float(s) for s in fld.sigma],
                        "lower": [float(s) for s in fld.lower],
                        "upper": [float(s) for s in fld.upper],
                    }
                )
            cycle_pathtime["t_o"] = t_o
            cycle_pathtime["s_merge_ego"] = config.s_merge_ego
            cycle_pathtime["conflict_begin"] = config.s_merge_ego - config.conflict_margin

            # once the other vehicle is inside the intersection, leading is
            # moot and the yield plan just keeps ego behind the crossing body
            other_crossed = float(track.mean[0]) >= config.s_merge_other
            if not yield_feasible and not lead_feasible and not other_crossed:
                warm_state = {}
                chosen_kind = decision_mod.EMERGENCY
                chosen_traj = emergency
            elif other_crossed or (not valid_tc and yield_feasible):
                # leading is no longer a reachable homotopy class: pure yield plan
                warm_state = {}
                result = planner.plan_straight(request, YIELD)
                traj = result.trajectories[YIELD]
                prob = result.peak_collision[YIELD]
                cost = result.ride_costs[YIELD]
                if prob <= config.thresholds.p_coll_max:
                    chosen_kind = decision_mod.KIND_YIELD
                    chosen_traj = traj
                else:
                    chosen_kind = decision_mod.EMERGENCY
                    chosen_traj = emergency
                rows.append(SimLogRow(t, "follow (t_pin)", prob, cost, chosen_kind))
                profiles.extend(_profile_rows(t, "follow (t_pin)", traj, dt))
                cycle_pathtime["variants"].append(
                    {"t_c": None, "yield": [float(s) for s in traj]}
                )
            elif not yield_feasible:
                # committed past the point of stopping: pure lead plan
                warm_state = {}
                result = planner.plan_straight(request, planner.LEAD)
                traj = result.trajectories[planner.LEAD]
                prob = result.peak_collision[planner.LEAD]
                cost = result.ride_costs[planner.LEAD]
                if prob <= config.thresholds.p_coll_max:
                    chosen_kind = decision_mod.KIND_LEAD
                    chosen_traj = traj
                else:
                    chosen_kind = decision_mod.EMERGENCY
                    chosen_traj = emergency
                rows.append(SimLogRow(t, "lead (t_pin)", prob, cost, chosen_kind))
                profiles.extend(_profile_rows(t, "lead (t_pin)", traj, dt))
                cycle_pathtime["variants"].append(
                    {"t_c": None, "lead": [float(s) for s in traj]}
                )
            else:
                request.tc_candidates = tuple(valid_tc)
                try:
                    cycle_res = planner.plan_cycle(
                        request,
                        warm_starts=warm_state if config.warm_start else None,
                    )
                except FatalPlanningError as exc:
                    aborted = str(exc)
                    break
                warm_state = {
                    r.t_c: {b: _shift(traj) for b, traj in r.trajectories.items()}
                    for r in cycle_res.results
                }
                dec = decision_mod.select(
                    cycle_res.results,
                    belief,
                    config.thresholds,
                    t_pin,
                    emergency,
                    lead_allowed=lead_feasible,
                )
                chosen_kind = dec.kind
                chosen_traj = dec.trajectory
                for branch in (LEAD, YIELD):
                    for result in cycle_res.results:
                        if branch not in result.trajectories:
                            continue
                        label = _alt_label(branch, result.t_c, t_pin)
                        rows.append(
                            SimLogRow(
                                t,
                                label,
                                result.peak_collision[branch],
                                result.ride_costs[branch],
                                chosen_kind,
                            )
                        )
                        profiles.extend(
                            _profile_rows(t, label, result.trajectories[branch], dt)
                        )
                for result in cycle_res.results:
                    cycle_pathtime["variants"].append(
                        {
                            "t_c": result.t_c,
                            "lead": [float(s) for s in result.trajectories[LEAD]],
                            "yield": [float(s) for s in result.trajectories[YIELD]],
                        }
                    )
        cycle_pathtime["decision"] = chosen_kind
        pathtime.append(cycle_pathtime)
        decisions.append((t, chosen_kind))

        # execute the first segment after the pinned prefix; an emergency
        # profile starts from the current state and breaks pin continuity
        x = chosen_traj
        ego = VehicleState(
            "ego",
            float(x[1]),
            max(float((x[2] - x[1]) / dt), 0.0),
            float((x[3] - 2 * x[2] + x[1]) / dt**2),
            t + dt,
        )
        committed_next = float(x[2])
        other = step_other_vehicle(other, config.other.intention, t, cfg=config)

    return SimOutput(rows, profiles, pathtime, ego_trace, other_trace, decisions, aborted)
