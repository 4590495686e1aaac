import math

import numpy as np
import pytest

from mergeplan.decision import (
    EMERGENCY,
    KIND_LEAD,
    KIND_YIELD,
    NEUTRAL,
    Decision,
    DecisionThresholds,
    emergency_profile,
    peak_collision_probability,
    ride_cost,
    select,
)
from mergeplan.estimation import ManeuverBelief, entropy
from mergeplan.optimizer import CollisionField, CostAssembly, ResidualWeights
from mergeplan.planner import LEAD, PlanResult
from mergeplan.prediction import YIELD

T_PIN = 0.25


def belief(p_yield):
    probs = {YIELD: p_yield, "drive": 1.0 - p_yield}
    return ManeuverBelief(probs, entropy(probs.values()))


def plan(t_c, lead_cost, yield_cost, lead_prob, yield_prob):
    n = 12
    from mergeplan.optimizer import build_layout

    return PlanResult(
        variant="combinatorial",
        t_c=t_c,
        trajectories={LEAD: np.linspace(0, 22, n), YIELD: np.linspace(0, 14, n)},
        ride_costs={LEAD: lead_cost, YIELD: yield_cost},
        peak_collision={LEAD: lead_prob, YIELD: yield_prob},
        total_cost=lead_cost + yield_cost,
        converged=True,
        layout=build_layout(n, int(round(t_c / T_PIN))),
        fields={},
    )


def both_plans(lead_cost=100.0, yield_cost=120.0, lead_prob=0.01, yield_prob=0.03):
    return [
        plan(T_PIN, lead_cost, yield_cost, lead_prob, yield_prob),
        plan(2 * T_PIN, lead_cost * 1.1, yield_cost * 0.9, lead_prob, yield_prob),
    ]


THRESHOLDS = DecisionThresholds(entropy_max=0.45, p_coll_max=0.05)


class TestThresholds:
    def test_valid(self):
        DecisionThresholds(0.45, 0.05)

    def test_entropy_range(self):
        with pytest.raises(ValueError):
            DecisionThresholds(entropy_max=0.8, p_coll_max=0.05)

    def test_prob_range(self):
        with pytest.raises(ValueError):
            DecisionThresholds(entropy_max=0.45, p_coll_max=1.5)


class TestPeakCollisionProbability:
    def test_max_over_points(self):
        n = 4
        mu = np.array([10.0, 10.0, 10.0])
        field = CollisionField(mu, np.ones(3), mu - 30.0, mu + 30.0, conflict_begin=-50.0)
        traj = np.array([9.0, 10.5, 9.8, 9.9])
        prof = [field.term(np.array([x]), np.array([k]))[0] for k, x in enumerate(traj[1:])]
        assert peak_collision_probability(traj, field) == pytest.approx(max(prof))

    def test_at_lower_truncation(self):
        mu = np.full(3, 10.0)
        field = CollisionField(mu, np.ones(3), mu - 5.0, mu + 5.0, conflict_begin=0.0)
        traj = np.concatenate(([0.0], mu - 5.0))
        assert peak_collision_probability(traj, field) == 0.0

    def test_none_field(self):
        assert peak_collision_probability(np.zeros(5), None) == 0.0


class TestRideCost:
    def test_constant_desired_speed(self):
        w = ResidualWeights(v_desired=8.0)
        traj = 8.0 * 0.25 * np.arange(10)
        assert ride_cost(traj, w, 0.25) == pytest.approx(0.0, abs=1e-9)

    def test_matches_independent_sum(self):
        # 5-point hand-checkable trajectory against the residual definition
        w = ResidualWeights(
            w_v_vel=2.0, w_v_acc=1.0, w_v_jrk=0.5, w_r_vel=10.0, w_r_acc=10.0,
            w_r_jrk=10.0, w_coll=123.0, v_desired=4.0,
            v_range=(0.0, 5.0), a_range=(-2.0, 2.0), j_range=(-3.0, 3.0),
        )
        x = np.array([0.0, 1.2, 2.0, 3.5, 4.0])
        dt = 0.5
        v = np.diff(x) / dt
        acc = np.diff(x, n=2) / dt**2
        jrk = np.diff(x, n=3) / dt**3
        expected = (
            2.0 * np.sum((v - 4.0) ** 2)
            + 1.0 * np.sum(acc**2)
            + 0.5 * np.sum(jrk**2)
            + 10.0 * np.sum(np.maximum(v - 5.0, 0) ** 2 + np.minimum(v, 0) ** 2)
            + 10.0 * np.sum(np.maximum(acc - 2.0, 0) ** 2 + np.minimum(acc + 2.0, 0) ** 2)
            + 10.0 * np.sum(np.maximum(jrk - 3.0, 0) ** 2 + np.minimum(jrk + 3.0, 0) ** 2)
        )
        assert ride_cost(x, w, dt) == pytest.approx(expected)

    def test_collision_weight_excluded(self):
        w_hot = ResidualWeights(w_coll=1e9)
        w_cold = ResidualWeights(w_coll=0.0)
        x = np.linspace(0, 5, 8)
        assert ride_cost(x, w_hot, 0.25) == pytest.approx(ride_cost(x, w_cold, 0.25))


class TestEmergencyProfile:
    def test_stopping_distance(self):
        # v=10, b=8: stops after 6.25 m
        traj = emergency_profile(0.0, 10.0, 8.0, 40, 0.25)
        assert traj[-1] == pytest.approx(6.25, abs=0.2)

    def test_standing_holds(self):
        traj = emergency_profile(5.0, 0.0, 8.0, 10, 0.25)
        assert np.allclose(traj, 5.0)

    def test_speed_nonincreasing(self):
        traj = emergency_profile(0.0, 10.0, 8.0, 30, 0.25)
        v = np.diff(traj) / 0.25
        assert np.all(np.diff(v) <= 1e-9)

    def test_negative_speed_rejected(self):
        with pytest.raises(ValueError):
            emergency_profile(0.0, -1.0, 8.0, 10, 0.25)


class TestSelect:
    def test_high_entropy_postpones(self):
        dec = select(both_plans(), belief(0.5), THRESHOLDS, T_PIN)
        assert dec.kind == NEUTRAL

    def test_near_tie_picks_follow(self):
        # lead 114.674 vs follow 112.568 with acceptable risk: yield wins
        results = both_plans(lead_cost=114.674, yield_cost=112.568, lead_prob=0.011, yield_prob=0.033)
        dec = select(results, belief(0.95), THRESHOLDS, T_PIN)
        assert dec.kind == KIND_YIELD

    def test_cheaper_lead_wins(self):
        results = both_plans(lead_cost=50.0, yield_cost=120.0)
        dec = select(results, belief(0.95), THRESHOLDS, T_PIN)
        assert dec.kind == KIND_LEAD

    def test_risky_branch_excluded(self):
        results = both_plans(lead_cost=50.0, yield_cost=120.0, lead_prob=0.2)
        dec = select(results, belief(0.95), THRESHOLDS, T_PIN)
        assert dec.kind == KIND_YIELD

    def test_emergency_when_nothing_feasible(self):
        results = both_plans(lead_prob=0.5, yield_prob=0.5)
        fallback = np.linspace(0, 3, 12)
        dec = select(results, belief(0.95), THRESHOLDS, T_PIN, emergency_trajectory=fallback)
        assert dec.kind == EMERGENCY
        assert np.array_equal(dec.trajectory, fallback)

    def test_tie_breaks_toward_yield(self):
        results = both_plans(lead_cost=100.0, yield_cost=100.0)
        dec = select(results, belief(0.95), THRESHOLDS, T_PIN)
        assert dec.kind == KIND_YIELD

    def test_lead_disallowed(self):
        results = both_plans(lead_cost=50.0, yield_cost=120.0)
        dec = select(results, belief(0.95), THRESHOLDS, T_PIN, lead_allowed=False)
        assert dec.kind == KIND_YIELD

    def test_no_results(self):
        with pytest.raises(ValueError):
            select([], belief(0.5), THRESHOLDS, T_PIN)

    def test_positive_scaling_keeps_argmin(self):
        for scale in (0.5, 1.0, 7.0):
            results = both_plans(lead_cost=90.0 * scale, yield_cost=110.0 * scale)
            dec = select(results, belief(0.95), THRESHOLDS, T_PIN)
            assert dec.kind == KIND_LEAD

    def test_exhaustive_rule_grid(self):
        # entropy x lead-prob x yield-prob; decision kind per the three rules
        for p_yield in (0.5, 0.915, 0.993):
            b = belief(p_yield)
            for lead_p in (0.01, 0.04, 0.2):
                for yield_p in (0.01, 0.04, 0.2):
                    results = both_plans(
                        lead_cost=100.0, yield_cost=90.0, lead_prob=lead_p, yield_prob=yield_p
                    )
                    dec = select(results, b, THRESHOLDS, T_PIN)
                    if b.entropy > THRESHOLDS.entropy_max:
                        assert dec.kind == NEUTRAL
                    elif yield_p <= 0.05:
                        assert dec.kind == KIND_YIELD  # cheaper and feasible
                    elif lead_p <= 0.05:
                        assert dec.kind == KIND_LEAD
                    else:
                        assert dec.kind == EMERGENCY

    def test_determinism(self):
        results = both_plans()
        b = belief(0.9)
        kinds = {select(results, b, THRESHOLDS, T_PIN).kind for _ in range(5)}
        assert len(kinds) == 1
