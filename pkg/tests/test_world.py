import math

import numpy as np
import pytest

from mergeplan.prediction import GaussianTrajectory
from mergeplan.world import (
    FieldOfView,
    MergeGeometry,
    Pose2d,
    RoutePath,
    VehicleState,
    in_field_of_view,
    project,
    time_to_merge_mean,
)


def straight_route():
    return RoutePath("r", np.array([[0.0, 0.0], [100.0, 0.0]]))


def l_route():
    return RoutePath("l", np.array([[0.0, 0.0], [10.0, 0.0], [10.0, 10.0]]))


class TestRoutePath:
    def test_arclength(self):
        r = l_route()
        assert np.allclose(r.cumulative_arclength, [0.0, 10.0, 20.0])
        assert r.length == 20.0

    def test_too_few_points(self):
        with pytest.raises(ValueError):
            RoutePath("bad", np.array([[0.0, 0.0]]))

    def test_coincident_points(self):
        with pytest.raises(ValueError):
            RoutePath("bad", np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 0.0]]))


class TestMergeGeometry:
    def test_validate(self):
        geo = MergeGeometry("a", "b", 40.0, 15.0)
        geo.validate(straight_route(), l_route())

    def test_out_of_range(self):
        geo = MergeGeometry("a", "b", 140.0, 15.0)
        with pytest.raises(ValueError):
            geo.validate(straight_route(), l_route())


class TestProject:
    def test_straight_interior(self):
        pose = project(straight_route(), 40.0)
        assert (pose.x, pose.y) == (40.0, 0.0)
        assert pose.heading == 0.0

    def test_start_point(self):
        pose = project(straight_route(), 0.0)
        assert (pose.x, pose.y) == (0.0, 0.0)

    def test_l_shape(self):
        # 10 m along the first leg, then 5 m up the second
        pose = project(l_route(), 15.0)
        assert pose.x == pytest.approx(10.0)
        assert pose.y == pytest.approx(5.0)
        assert pose.heading == pytest.approx(math.pi / 2)

    def test_out_of_domain(self):
        with pytest.raises(ValueError):
            project(straight_route(), -1.0)
        with pytest.raises(ValueError):
            project(straight_route(), 100.5)

    def test_continuity_in_s(self):
        # |project(s+d) - project(s)| <= d for a polyline
        r = l_route()
        rng = np.random.default_rng(1)
        for _ in range(200):
            s = rng.uniform(0.0, r.length - 0.01)
            d = rng.uniform(0.0, min(0.5, r.length - s))
            p0 = project(r, s)
            p1 = project(r, s + d)
            assert math.hypot(p1.x - p0.x, p1.y - p0.y) <= d * (1 + 1e-9)


def _state(x, y, heading):
    st = VehicleState("r", 0.0, 0.0, 0.0)
    st.pose_2d = Pose2d(x, y, heading)
    return st


class TestFieldOfView:
    def test_inside(self):
        fov = FieldOfView(210.0, 40.0)
        assert in_field_of_view(_state(0, 0, 0), fov, _state(39.0, 0.0, 0.0))

    def test_beyond_range(self):
        fov = FieldOfView(210.0, 40.0)
        assert not in_field_of_view(_state(0, 0, 0), fov, _state(41.0, 0.0, 0.0))

    def test_behind(self):
        # bearing 180 deg exceeds the 105 deg half-extent
        fov = FieldOfView(210.0, 40.0)
        assert not in_field_of_view(_state(0, 0, 0), fov, _state(-10.0, 0.0, 0.0))

    def test_directed_visibility(self):
        # symmetric in distance, not in bearing
        fov = FieldOfView(90.0, 40.0)
        a = _state(0, 0, 0)
        b = _state(10.0, 0.0, 0.0)  # faces away from a
        assert in_field_of_view(a, fov, b)
        assert not in_field_of_view(b, fov, a)

    def test_invalid_params(self):
        with pytest.raises(ValueError):
            FieldOfView(0.0, 40.0)
        with pytest.raises(ValueError):
            FieldOfView(210.0, -1.0)


def _traj(mu, dt=1.0):
    mu = np.asarray(mu, dtype=float)
    n = len(mu)
    return GaussianTrajectory(dt, mu, np.ones(n), mu - 100.0, mu + 100.0)


class TestTimeToMergeMean:
    def test_constant_speed(self):
        # 10 m/s from 0, samples at t = 1..4
        assert time_to_merge_mean(_traj([10, 20, 30, 40]), 40.0) == pytest.approx(4.0)

    def test_never_reached(self):
        assert time_to_merge_mean(_traj([1, 2, 3]), 50.0) == pytest.approx(3.0)

    def test_interpolated(self):
        assert time_to_merge_mean(_traj([0, 3, 7, 12]), 5.0) == pytest.approx(2.5)

    def test_empty(self):
        with pytest.raises(ValueError):
            time_to_merge_mean(_traj([]), 5.0)

    def test_monotone_in_speed(self):
        # faster constant speed never crosses later
        times = []
        for v in (5.0, 8.0, 11.0):
            mu = v * (np.arange(20) + 1) * 0.25
            times.append(time_to_merge_mean(_traj(mu, 0.25), 20.0))
        assert times == sorted(times, reverse=True)
