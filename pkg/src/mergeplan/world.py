"""Route geometry, Frenet projection and field-of-view visibility.

Routes are 2-D polylines; the planner itself works on the longitudinal
arclength coordinate only. The 2-D poses are used for perception
(visibility gating) and for plotting.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Pose2d:
    x: float
    y: float
    heading: float  # rad, world frame


@dataclass
class RoutePath:
    """Polyline centerline with precomputed cumulative arclength."""

    id: str
    centerline: np.ndarray  # (M, 2) points, meters
    cumulative_arclength: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        self.centerline = np.asarray(self.centerline, dtype=float)
        if self.centerline.ndim != 2 or self.centerline.shape[1] != 2:
            raise ValueError("centerline must be an (M, 2) array")
        if len(self.centerline) < 2:
            raise ValueError("centerline needs at least two points")
        seg = np.diff(self.centerline, axis=0)
        seg_len = np.hypot(seg[:, 0], seg[:, 1])
        if np.any(seg_len <= 0.0):
            raise ValueError("consecutive centerline points must not coincide")
        self.cumulative_arclength = np.concatenate(([0.0], np.cumsum(seg_len)))

    @property
    def length(self) -> float:
        return float(self.cumulative_arclength[-1])


@dataclass(frozen=True)
class MergeGeometry:
    """Arclength of the intersection/merge begin on each of two routes."""

    route_a: str
    route_b: str
    s_merge_a: float
    s_merge_b: float

    def validate(self, route_a: RoutePath, route_b: RoutePath) -> None:
        if not (0.0 <= self.s_merge_a <= route_a.length):
            raise ValueError("s_merge_a outside route arclength range")
        if not (0.0 <= self.s_merge_b <= route_b.length):
            raise ValueError("s_merge_b outside route arclength range")


@dataclass
class VehicleState:
    """Longitudinal kinematic state on a route plus derived 2-D pose."""

    route: str
    s: float
    v: float
    a: float
    t: float = 0.0
    pose_2d: Pose2d | None = None


@dataclass(frozen=True)
class FieldOfView:
    angular_extent: float  # degrees
    range: float  # meters

    def __post_init__(self) -> None:
        if not (0.0 < self.angular_extent <= 360.0):
            raise ValueError("angular_extent must be in (0, 360] degrees")
        if self.range <= 0.0:
            raise ValueError("range must be positive")


def project(route: RoutePath, s: float) -> Pose2d:
    """Interpolated 2-D position and heading at arclength s.

    Heading at a polyline vertex is the direction of the following segment.
    """
    arc = route.cumulative_arclength
    if s < 0.0 or s > route.length:
        raise ValueError(f"s={s} outside [0, {route.length}] on route {route.id!r}")
    # index of the segment that contains s; the last point belongs to the last segment
    i = int(np.searchsorted(arc, s, side="right")) - 1
    i = min(max(i, 0), len(arc) - 2)
    seg = route.centerline[i + 1] - route.centerline[i]
    seg_len = arc[i + 1] - arc[i]
    frac = (s - arc[i]) / seg_len
    pos = route.centerline[i] + frac * seg
    return Pose2d(float(pos[0]), float(pos[1]), math.atan2(seg[1], seg[0]))


def in_field_of_view(observer: VehicleState, fov: FieldOfView, target: VehicleState) -> bool:
    """True iff the target is within sensing range and angular extent.

    Range is Euclidean between the 2-D poses; bearing is measured against
    the observer heading (directed visibility).
    """
    if observer.pose_2d is None or target.pose_2d is None:
        raise ValueError("both states need a 2-D pose for visibility checks")
    dx = target.pose_2d.x - observer.pose_2d.x
    dy = target.pose_2d.y - observer.pose_2d.y
    if math.hypot(dx, dy) > fov.range:
        return False
    bearing = math.atan2(dy, dx) - observer.pose_2d.heading
    bearing = (bearing + math.pi) % (2.0 * math.pi) - math.pi
    return abs(bearing) <= math.radians(fov.angular_extent) / 2.0


def time_to_merge_mean(traj, s_merge: float) -> float:
    """Earliest time the trajectory's mean position reaches s_merge.

    `traj` is a prediction.GaussianTrajectory whose sample i corresponds to
    time (i+1)*dt after the anchor state. The crossing time is linearly
    interpolated between samples; the horizon end (len(mu)*dt) is returned
    when the mean never reaches s_merge.
    """
    mu = np.asarray(traj.mu, dtype=float)
    if len(mu) == 0:
        raise ValueError("empty trajectory")
    dt = float(traj.dt)
    idx = np.nonzero(mu >= s_merge)[0]
    if len(idx) == 0:
        return len(mu) * dt
    i = int(idx[0])
    if i == 0:
        return dt
    t_prev = i * dt  # sample i-1 sits at time i*dt
    step = mu[i] - mu[i - 1]
    if step <= 0.0:
        return t_prev
    return float(t_prev + dt * (s_merge - mu[i - 1]) / step)
