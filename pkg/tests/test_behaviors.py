import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from driverl.behaviors import (EVAL_BEHAVIORS, TRAIN_BEHAVIORS, BehaviorSpec,
                               InvalidTraceError, behavior_sets_json,
                               label_adherence, load_behavior_asset, metric_rmse,
                               sample_behavior, smoothness_rmse)


class FakeTrace:
    """Minimal trace stand-in driven by explicit arrays."""

    def __init__(self, **cols):
        n = len(next(iter(cols.values())))
        base = {f: np.zeros(n) for f in
                ("t", "s", "n", "dphi", "delta", "v", "ddelta", "a",
                 "n_center", "a_lat")}
        base.update({k: np.asarray(v, dtype=float) for k, v in cols.items()})
        self._cols = base

    def arrays(self):
        return self._cols


def centerline_spec():
    return BehaviorSpec("t/c", "centerline", "stay centered", "E_C")


def velocity_spec(v):
    return BehaviorSpec("t/v", "velocity", f"drive {v}", "E_V", v_ref=v)


def reversing_spec():
    return BehaviorSpec("t/r", "reversing", "go back", "E_R")


def smooth_spec():
    return BehaviorSpec("t/s", "smooth", "gently", "E_S")


class TestMetrics:
    def test_exact_velocity_adherence(self):
        trace = FakeTrace(v=np.full(50, 1.83))
        assert metric_rmse(trace, velocity_spec(1.83)) == 0.0

    def test_reversing_error_of_stopped_car(self):
        trace = FakeTrace(v=np.zeros(40))
        assert metric_rmse(trace, reversing_spec()) == pytest.approx(1.0)

    def test_centerline_constant_magnitude(self):
        trace = FakeTrace(n_center=np.array([0.3, -0.3, 0.3, -0.3]))
        assert metric_rmse(trace, centerline_spec()) == pytest.approx(0.3)

    def test_smooth_combines_lateral(self):
        trace = FakeTrace(a=np.full(10, 3.0), a_lat=np.full(10, 4.0))
        assert metric_rmse(trace, smooth_spec()) == pytest.approx(5.0)
        assert smoothness_rmse(trace, include_lateral=False) == pytest.approx(3.0)

    def test_reversing_equals_velocity_formula_at_minus_one(self):
        v = np.array([-1.2, -0.8, -1.5, 0.3])
        trace = FakeTrace(v=v)
        by_formula = float(np.sqrt(np.mean((v - (-1.0)) ** 2)))
        assert metric_rmse(trace, reversing_spec()) == pytest.approx(by_formula,
                                                                     rel=1e-12)

    def test_empty_trace_rejected(self):
        with pytest.raises(InvalidTraceError):
            metric_rmse(FakeTrace(v=np.array([])), reversing_spec())

    @settings(max_examples=100, deadline=None)
    @given(c=st.floats(1e-3, 1e3), seed=st.integers(0, 2**16))
    def test_scale_correctness(self, c, seed):
        rng = np.random.default_rng(seed)
        dev = rng.normal(size=30)
        base = metric_rmse(FakeTrace(v=1.83 + dev), velocity_spec(1.83))
        scaled = metric_rmse(FakeTrace(v=1.83 + c * dev), velocity_spec(1.83))
        assert scaled == pytest.approx(c * base, rel=1e-9)


class TestLabels:
    def test_all_negative_velocity_adheres(self):
        lab = label_adherence(FakeTrace(v=np.full(30, -1.0)), reversing_spec())
        assert lab.adheres == 1
        assert lab.rule_id == "reversing_fraction"

    def test_forward_velocity_does_not_adhere(self):
        assert label_adherence(FakeTrace(v=np.full(30, 2.0)),
                               reversing_spec()).adheres == 0

    def test_reversing_fraction_threshold(self):
        v = np.concatenate([np.full(89, -1.0), np.full(11, 1.0)])
        assert label_adherence(FakeTrace(v=v), reversing_spec()).adheres == 0
        v = np.concatenate([np.full(90, -1.0), np.full(10, 1.0)])
        assert label_adherence(FakeTrace(v=v), reversing_spec()).adheres == 1

    def test_centerline_threshold(self):
        assert label_adherence(FakeTrace(n_center=np.full(20, 0.05)),
                               centerline_spec()).adheres == 1
        assert label_adherence(FakeTrace(n_center=np.full(20, 0.25)),
                               centerline_spec()).adheres == 0

    def test_oracle_equivalence_thousand_traces(self):
        # independent reimplementation of every rule on randomized traces
        rng = np.random.default_rng(2024)
        rms = lambda x: float(np.sqrt(np.mean(x**2)))
        specs = {
            "reversing": reversing_spec(), "centerline": centerline_spec(),
            "velocity": velocity_spec(1.83), "smooth": smooth_spec(),
            "raceline": BehaviorSpec("t/rl", "raceline", "on line", "E_C"),
        }
        for _ in range(1000):
            n = int(rng.integers(5, 60))
            trace = FakeTrace(
                v=rng.uniform(-3, 6, n), n=rng.uniform(-0.5, 0.5, n),
                n_center=rng.uniform(-0.5, 0.5, n), a=rng.uniform(-2, 2, n),
                a_lat=rng.uniform(-2, 2, n))
            arr = trace.arrays()
            expected = {
                "reversing": int(np.mean(arr["v"] < 0) >= 0.9),
                "centerline": int(rms(arr["n_center"]) < 0.2),
                "velocity": int(rms(arr["v"] - 1.83) < 0.3),
                "smooth": int(rms(np.sqrt(arr["a"]**2 + arr["a_lat"]**2)) < 1.0),
                "raceline": int(rms(arr["n"]) < 0.2),
            }
            for kind, spec in specs.items():
                assert label_adherence(trace, spec).adheres == expected[kind], kind


class TestBehaviorSets:
    def test_train_canonical(self):
        b = sample_behavior("train", 1)
        assert b.prompt_text == "Drive at 1.83 m/s as closely as possible"
        assert b.v_ref == 1.83
        assert sample_behavior("train", 0).prompt_text == "Drive on the centerline"
        assert sample_behavior("train", 2).prompt_text == "Reverse the car"
        assert sample_behavior("train", 3).prompt_text == "Drive smoothly"

    def test_eval_velocity_fifth_prompt_spelling(self):
        b = sample_behavior("eval", 9)
        assert b.prompt_text == "Adjsut the speed to exactly 4.5 m/s"
        assert b.v_ref == 4.5

    def test_eval_reversing_second(self):
        assert sample_behavior("eval", 11).prompt_text == "Reverse the vehicle"

    def test_eval_velocity_targets(self):
        targets = [b.v_ref for b in EVAL_BEHAVIORS if b.kind == "velocity"]
        assert targets == [3.5, 2.2, 1.25, 2.9, 4.5]

    def test_out_of_range_index(self):
        with pytest.raises(IndexError):
            sample_behavior("eval", 20)
        with pytest.raises(ValueError):
            sample_behavior("dev", 0)

    def test_generated_training_velocities_seeded(self):
        a = sample_behavior("train", 7, seed=3)
        b = sample_behavior("train", 7, seed=3)
        c = sample_behavior("train", 7, seed=4)
        assert a == b
        assert a.v_ref != c.v_ref
        assert a.kind == "velocity" and a.v_ref > 0

    def test_eval_metric_mapping_total(self):
        assert len(EVAL_BEHAVIORS) == 20
        for b in EVAL_BEHAVIORS:
            assert b.metric_id in ("E_C", "E_V", "E_R", "E_S")
        counts = {m: sum(1 for b in EVAL_BEHAVIORS if b.metric_id == m)
                  for m in ("E_C", "E_V", "E_R", "E_S")}
        assert counts == {"E_C": 5, "E_V": 5, "E_R": 5, "E_S": 5}

    def test_velocity_requires_positive_v_ref(self):
        with pytest.raises(ValueError):
            BehaviorSpec("x", "velocity", "drive", "E_V", v_ref=0.0)

    def test_asset_matches_code(self):
        assert load_behavior_asset() == json.loads(behavior_sets_json())
