"""IDM-driven motion prediction with Kalman uncertainty propagation.

Other vehicles are predicted per maneuver hypothesis (drive / yield). Each
hypothesis rolls the linear constant-acceleration system forward with the
IDM acceleration as control input; the covariance recursion of the Kalman
prediction step yields a per-step Gaussian over the longitudinal position,
which is truncated at the kinematic reachability envelope and, for the
yield hypothesis, at the intersection begin.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateHypothesisError

DRIVE = "drive"
YIELD = "yield"


@dataclass(frozen=True)
class IdmParams:
    """Intelligent Driver Model parameters.

    v0: desired speed (m/s), T: time headway (s), a_max: maximum
    acceleration (m/s^2), b_comf: comfortable deceleration (m/s^2,
    positive), s0: minimum gap (m), delta: acceleration exponent.
    """

    v0: float = 8.0
    T: float = 1.5
    a_max: float = 1.5
    b_comf: float = 2.0
    s0: float = 2.0
    delta: float = 4.0

    def __post_init__(self) -> None:
        for name in ("v0", "T", "a_max", "b_comf", "s0", "delta"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"IDM parameter {name} must be positive")


@dataclass
class GaussianState:
    """State [x, v, a] with covariance."""

    mean: np.ndarray  # (3,)
    cov: np.ndarray  # (3, 3)

    def __post_init__(self) -> None:
        self.mean = np.asarray(self.mean, dtype=float).reshape(3)
        self.cov = np.asarray(self.cov, dtype=float).reshape(3, 3)
        if not np.allclose(self.cov, self.cov.T, atol=1e-9):
            raise ValueError("covariance must be symmetric")


@dataclass
class NoiseParams:
    """Process-noise variance and measurement covariance for z = [x, v].

    The default sigma_a_sq keeps the 2-sigma position band a few meters
    wide four seconds into an open-loop prediction.
    """

    sigma_a_sq: float = 0.01
    R: np.ndarray = field(default_factory=lambda: np.diag([0.04, 0.04]))

    def __post_init__(self) -> None:
        if self.sigma_a_sq < 0.0:
            raise ValueError("sigma_a_sq must be non-negative")
        self.R = np.asarray(self.R, dtype=float).reshape(2, 2)
        if not np.allclose(self.R, self.R.T, atol=1e-12):
            raise ValueError("R must be symmetric")


@dataclass
class GaussianTrajectory:
    """Per-step position mean/std-dev with truncation bounds.

    Sample i corresponds to time (i+1)*dt after the anchor state (the
    anchor itself is not stored).
    """

    dt: float
    mu: np.ndarray
    sigma: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self) -> None:
        self.mu = np.asarray(self.mu, dtype=float)
        self.sigma = np.asarray(self.sigma, dtype=float)
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        n = len(self.mu)
        if not (len(self.sigma) == len(self.lower) == len(self.upper) == n):
            raise ValueError("mu, sigma, lower, upper must have equal length")
        if np.any(self.sigma < 0.0):
            raise ValueError("sigma must be non-negative")
        if np.any(self.lower >= self.upper):
            raise DegenerateHypothesisError("truncation interval is empty")

    @property
    def times(self) -> np.ndarray:
        return (np.arange(len(self.mu)) + 1) * self.dt


@dataclass
class ManeuverHypothesisSet:
    """Weighted truncated-Gaussian components forming a mixture prediction."""

    components: list[tuple[str, GaussianTrajectory]]
    weights: np.ndarray

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=float)
        if len(self.weights) != len(self.components):
            raise ValueError("one weight per component required")
        if np.any(self.weights < 0.0) or abs(self.weights.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be non-negative and sum to 1")
        labels = [label for label, _ in self.components]
        if len(set(labels)) != len(labels):
            raise ValueError("component labels must be unique")

    def component(self, label: str) -> GaussianTrajectory | None:
        for lab, traj in self.components:
            if lab == label:
                return traj
        return None

    def weight(self, label: str) -> float:
        for (lab, _), w in zip(self.components, self.weights):
            if lab == label:
                return float(w)
        return 0.0


# --- linear system matrices (piecewise-constant acceleration) ---


def state_transition(dt: float) -> np.ndarray:
    return np.array(
        [
            [1.0, dt, dt * dt / 2.0],
            [0.0, 1.0, dt],
            [0.0, 0.0, 1.0],
        ]
    )


def input_model(dt: float) -> np.ndarray:
    return np.array([dt * dt / 2.0, dt, 1.0])


def process_noise(dt: float, sigma_a_sq: float) -> np.ndarray:
    b = input_model(dt)
    return np.outer(b, b) * sigma_a_sq


MEASUREMENT_MODEL = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])


def idm_acceleration(
    ego_v: float,
    gap: float,
    lead_v: float,
    p: IdmParams,
    b_hard: float = 8.0,
) -> float:
    """IDM acceleration, clamped to [-b_hard, a_max].

    gap is the net distance to the leader (math.inf for a free road).
    The formula is evaluated at max(ego_v, 0); a non-positive finite gap
    is a collision state and raises.
    """
    if not math.isinf(gap) and gap <= 0.0:
        raise ValueError("non-positive gap: vehicles are in a collision state")
    v = max(ego_v, 0.0)
    free_term = (v / p.v0) ** p.delta
    if math.isinf(gap):
        interaction = 0.0
    else:
        s_star = p.s0 + v * p.T + v * (v - lead_v) / (2.0 * math.sqrt(p.a_max * p.b_comf))
        interaction = (s_star / gap) ** 2
    a = p.a_max * (1.0 - free_term - interaction)
    return float(min(max(a, -b_hard), p.a_max))


def kalman_predict(prior: GaussianState, u: float, dt: float, noise: NoiseParams) -> GaussianState:
    """Prediction step: mean = F mean + B u, cov = F cov F^T + Q."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    f = state_transition(dt)
    b = input_model(dt)
    mean = f @ prior.mean + b * u
    cov = f @ prior.cov @ f.T + process_noise(dt, noise.sigma_a_sq)
    cov = (cov + cov.T) / 2.0
    return GaussianState(mean, cov)


def kalman_update(prior: GaussianState, z: np.ndarray, noise: NoiseParams) -> GaussianState:
    """Measurement update with z = [x, v]; posterior covariance symmetrized."""
    z = np.asarray(z, dtype=float).reshape(2)
    h = MEASUREMENT_MODEL
    s = h @ prior.cov @ h.T + noise.R
    if abs(np.linalg.det(s)) < 1e-15:
        raise np.linalg.LinAlgError("innovation covariance is singular")
    gain = np.linalg.solve(s.T, (prior.cov @ h.T).T).T
    mean = prior.mean + gain @ (z - h @ prior.mean)
    cov = (np.eye(3) - gain @ h) @ prior.cov
    cov = (cov + cov.T) / 2.0
    return GaussianState(mean, cov)


def reachability_envelope(
    x0: float,
    v0: float,
    steps: int,
    dt: float,
    a_max: float,
    b_hard: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Kinematic position envelope for steps 1..steps from the anchor state.

    Lower bound: immediate maximal braking at b_hard until standstill
    (v >= 0, no reversing). Upper bound: immediate maximal acceleration.
    """
    v0 = max(v0, 0.0)
    t = (np.arange(steps) + 1) * dt
    t_stop = v0 / b_hard if b_hard > 0.0 else np.inf
    braked = np.where(
        t < t_stop,
        x0 + v0 * t - b_hard * t * t / 2.0,
        x0 + v0 * v0 / (2.0 * b_hard) if b_hard > 0.0 else x0,
    )
    accel = x0 + v0 * t + a_max * t * t / 2.0
    return braked, accel


def truncate_bounds(
    maneuver: str,
    envelope: tuple[np.ndarray, np.ndarray],
    s_merge: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-step truncation interval for a maneuver hypothesis.

    Drive keeps the full reachability envelope; yield caps the upper bound
    at the intersection begin. An empty interval at any step means the
    maneuver is kinematically impossible.
    """
    lower, upper = envelope
    if maneuver == YIELD:
        upper = np.minimum(upper, s_merge)
    if np.any(lower >= upper):
        raise DegenerateHypothesisError(
            f"{maneuver} hypothesis has an empty truncation interval"
        )
    return np.array(lower, dtype=float), np.array(upper, dtype=float)


@dataclass(frozen=True)
class PredictionScene:
    """Context the predicted vehicle reacts to.

    s_merge: intersection begin on the predicted vehicle's route (needed
    for the yield hypothesis and the truncation). An optional constant
    speed leader is described by its position at the anchor time and its
    speed.
    """

    s_merge: float
    leader_s: float | None = None
    leader_v: float = 0.0


def predict_maneuver(
    start: GaussianState,
    maneuver: str,
    scene: PredictionScene,
    p: IdmParams,
    noise: NoiseParams,
    horizon_steps: int,
    dt: float,
    b_hard: float = 8.0,
) -> GaussianTrajectory:
    """Roll out one maneuver hypothesis over the horizon.

    Per step the IDM supplies the commanded acceleration for the
    maneuver-specific context (yield: virtual standing obstacle at the
    intersection begin; drive: free road or the scene leader). The control
    fed through B is the acceleration increment, so the acceleration state
    tracks the IDM command and positions integrate piecewise-constant.
    """
    if horizon_steps < 1:
        raise ValueError("horizon_steps must be >= 1")
    if maneuver not in (DRIVE, YIELD):
        raise ValueError(f"unknown maneuver label {maneuver!r}")
    state = GaussianState(start.mean.copy(), start.cov.copy())
    mu = np.empty(horizon_steps)
    sigma = np.empty(horizon_steps)
    for k in range(horizon_steps):
        x, v, a = state.mean
        if maneuver == YIELD:
            gap = scene.s_merge - x
            lead_v = 0.0
        elif scene.leader_s is not None:
            t_k = k * dt
            gap = (scene.leader_s + scene.leader_v * t_k) - x
            lead_v = scene.leader_v
        else:
            gap = math.inf
            lead_v = 0.0
        a_cmd = idm_acceleration(v, gap, lead_v, p, b_hard)
        state = kalman_predict(state, a_cmd - a, dt, noise)
        mu[k] = state.mean[0]
        sigma[k] = math.sqrt(max(state.cov[0, 0], 0.0))
    envelope = reachability_envelope(
        start.mean[0], start.mean[1], horizon_steps, dt, p.a_max, b_hard
    )
    lower, upper = truncate_bounds(maneuver, envelope, scene.s_merge)
    return GaussianTrajectory(dt, mu, sigma, lower, upper)


def build_hypothesis_set(
    predictions: dict[str, GaussianTrajectory],
    probabilities: dict[str, float],
) -> ManeuverHypothesisSet:
    """Mixture with one component per maneuver, weighted by the belief."""
    components = []
    weights = []
    for label, traj in predictions.items():
        components.append((label, traj))
        weights.append(probabilities.get(label, 0.0))
    return ManeuverHypothesisSet(components, np.asarray(weights))
