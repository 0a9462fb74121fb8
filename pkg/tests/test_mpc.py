import math

import numpy as np
import pytest

from driverl.mpc import (InvalidParameterError, MpcController, MpcParams,
                         PARAM_SCHEMA, default_params, reference_speed,
                         schema_descriptor, solve_mpc, validate_params)
from driverl.simulator import VehicleState

from conftest import raceline_start_state

FACTORY_DEFAULTS = {
    "qv": 10, "qn": 20, "qalpha": 7, "qac": 0.01, "qddelta": 0.1,
    "alat_max": 10, "a_min": -5, "a_max": 5, "v_min": 1, "v_max": 5,
    "track_safety_margin": 0.45,
}


class TestParams:
    def test_defaults_verbatim(self):
        p = default_params()
        assert p.qn == 20
        assert p.track_safety_margin == 0.45
        assert p.as_dict() == {k: float(v) for k, v in FACTORY_DEFAULTS.items()}

    def test_validate_full_default_dict(self):
        assert validate_params(dict(FACTORY_DEFAULTS)) == default_params()

    def test_validate_idempotent_on_defaults(self):
        p = default_params()
        assert validate_params(p.as_dict()) == p

    def test_reversing_configuration_valid(self):
        p = validate_params({"v_max": -1, "v_min": -2})
        assert p.v_max == -1 and p.v_min == -2
        assert p.qn == 20  # merged over defaults

    def test_crossed_velocity_bounds_rejected(self):
        with pytest.raises(InvalidParameterError, match="v_max"):
            validate_params({"v_min": 3, "v_max": 2})

    def test_unknown_key_rejected(self):
        with pytest.raises(InvalidParameterError, match="foo"):
            validate_params({"foo": 1.0})

    def test_non_numeric_rejected(self):
        with pytest.raises(InvalidParameterError):
            validate_params({"qv": "ten"})
        with pytest.raises(InvalidParameterError):
            validate_params({"qv": True})
        with pytest.raises(InvalidParameterError):
            validate_params({"qv": float("nan")})

    def test_range_rule_named(self):
        with pytest.raises(InvalidParameterError, match="qv"):
            validate_params({"qv": -1.0})
        with pytest.raises(InvalidParameterError, match="a_max"):
            validate_params({"a_min": 2.0, "a_max": 1.0})

    def test_schema_descriptor_matches_defaults(self):
        desc = schema_descriptor()
        assert len(desc) == 11
        defaults = default_params().as_dict()
        for entry in desc:
            assert entry["default"] == defaults[entry["name"]]
            assert entry["min"] <= entry["default"] <= entry["max"]
            assert entry["tunable"] is True


class TestReferenceSpeed:
    def test_forward_clamp(self):
        p = validate_params({"v_min": 2.0, "v_max": 4.0})
        assert reference_speed(5.0, p) == pytest.approx(4.0)
        assert reference_speed(1.0, p) == pytest.approx(2.0)

    def test_small_positive_floor(self):
        p = validate_params({"v_min": 0.05, "v_max": 4.0})
        assert reference_speed(0.01, p) == pytest.approx(0.1)

    def test_reversing_midpoint(self):
        p = validate_params({"v_min": -2.0, "v_max": -1.0})
        assert reference_speed(5.0, p) == pytest.approx(-1.5)


class TestSolve:
    def test_equilibrium_zero_input(self, circle_track):
        sol = solve_mpc(raceline_start_state(circle_track), circle_track,
                        default_params())
        assert sol.status == "optimal"
        assert abs(sol.first_input.ddelta) < 1e-3
        assert abs(sol.first_input.a) < 1e-3

    def test_interior_equilibrium_on_straight(self, stadium):
        # v_ref = 5 inside [1, 6]: true interior equilibrium, kappa = 0
        params = validate_params({"v_max": 6.0})
        state = VehicleState(s=10.0, n=0.0, dphi=0.0, delta=0.0, v=5.0)
        ctrl = MpcController(stadium, params, reference="centerline")
        sol = ctrl.solve(state)
        assert sol.status == "optimal"
        assert abs(sol.first_input.ddelta) < 1e-3
        assert abs(sol.first_input.a) < 1e-3

    def test_overspeed_brakes(self, circle_track):
        p = validate_params({"qn": 0, "qalpha": 0, "qac": 0, "qddelta": 0})
        state = raceline_start_state(circle_track)
        sol = solve_mpc(VehicleState(state.s, 0, 0, state.delta, state.v + 1.0),
                        circle_track, p)
        assert sol.first_input.a < 0

    def test_margin_exceeding_halfwidth_infeasible(self, circle_track):
        sol = solve_mpc(raceline_start_state(circle_track), circle_track,
                        validate_params({"track_safety_margin": 2.0}))
        assert sol.status == "infeasible"
        assert sol.first_input.ddelta == 0.0 and sol.first_input.a == 0.0
        assert sol.predicted_states == []

    def test_optimal_implies_bounds_hold(self, circle_track):
        params = default_params()
        ref = circle_track.raceline
        checked = 0
        for s0, n0, v0 in [(0.0, 0.0, 5.0), (10.0, 0.2, 4.5), (30.0, -0.3, 4.8),
                           (50.0, 0.1, 5.0)]:
            state = VehicleState(s0, n0, 0.0, math.atan(0.33 * 0.0917), v0)
            sol = solve_mpc(state, circle_track, params)
            if sol.status != "optimal":
                continue
            checked += 1
            for ps in sol.predicted_states:
                assert params.v_min - 1e-6 <= ps.v <= params.v_max + 1e-6
                d_l = float(ref.d_left_at(ps.s)) - params.track_safety_margin
                d_r = float(ref.d_right_at(ps.s)) - params.track_safety_margin
                assert -d_r - 1e-6 <= ps.n <= d_l + 1e-6
                assert abs(ps.delta) <= 0.4 + 1e-6
                alat = ps.v**2 * math.tan(ps.delta) / 0.33
                assert abs(alat) <= params.alat_max + 1e-6
        assert checked >= 2

    def test_cost_not_worse_than_zero_input(self, circle_track):
        # independent zero-input rollout cost from the same state
        params = default_params()
        state = VehicleState(5.0, 0.25, 0.05, 0.03, 4.2)
        sol = solve_mpc(state, circle_track, params)
        ref = circle_track.raceline
        x = np.array([state.s, state.n, state.dphi, state.delta, state.v])
        cost_zero = 0.0
        for _ in range(20):
            kappa = float(ref.kappa_at(x[0]))
            denom = max(1.0 - x[1] * kappa, 0.05)
            s_dot = x[4] * math.cos(x[2]) / denom
            x = x + 0.05 * np.array([
                s_dot, x[4] * math.sin(x[2]),
                x[4] * math.tan(x[3]) / 0.33 - kappa * s_dot, 0.0, 0.0])
            v_ref = float(np.clip(ref.v_ref_at(x[0]), 1.0, 5.0))
            cost_zero += (params.qn * x[1]**2 + params.qv * (x[4] - v_ref)**2
                          + params.qalpha * x[2]**2)
        assert sol.cost <= cost_zero + 1e-6

    def test_monotone_qv_response(self, circle_track):
        state = VehicleState(0.0, 0.0, 0.0, math.atan(0.33 * 0.0917), 3.0)
        devs = []
        for qv in (10.0, 100.0):
            sol = solve_mpc(state, circle_track, validate_params({"qv": qv}))
            v_ref = 5.0
            devs.append(abs(sol.predicted_states[-1].v - v_ref))
        assert devs[1] <= devs[0] + 1e-9

    def test_inputs_always_clamped(self, circle_track):
        rng = np.random.default_rng(4)
        for _ in range(8):
            raw = {"v_min": float(rng.uniform(-2, 1)),
                   "v_max": float(rng.uniform(2, 6)),
                   "qv": float(rng.uniform(0, 200)),
                   "a_min": -5.0, "a_max": float(rng.uniform(1, 5))}
            params = validate_params(raw)
            state = VehicleState(float(rng.uniform(0, 60)),
                                 float(rng.uniform(-0.5, 0.5)),
                                 float(rng.uniform(-0.3, 0.3)),
                                 float(rng.uniform(-0.3, 0.3)),
                                 float(rng.uniform(-1, 6)))
            sol = solve_mpc(state, circle_track, params)
            if sol.status == "infeasible":
                continue
            assert -3.2 - 1e-9 <= sol.first_input.ddelta <= 3.2 + 1e-9
            assert params.a_min - 1e-9 <= sol.first_input.a <= params.a_max + 1e-9

    def test_horizon_minimum(self, circle_track):
        with pytest.raises(ValueError):
            MpcController(circle_track, default_params(), horizon=3)
