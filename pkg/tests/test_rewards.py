import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from driverl.behaviors import AdherenceLabel
from driverl.rewards import (ExtractionError, RewardBreakdown, extract_params,
                             parse_answer, r_drive, score_decision, score_format)

CANNED_RESPONSES = {
    "smooth_at_2": "new_mpc_params = {'qv': 10, 'qn': 20, 'qalpha': 7, "
                   "'qac': 0.01, 'qddelta': 0.1, 'v_max': 2.0, 'v_min': 1.0}",
    "reverse": "new_mpc_params = {v_max: -1, v_min: -2}",
    "drive_normal": "new_mpc_params = {'qv': 10, 'qn': 20, 'qalpha': 7, "
                    "'qac': 0.01, 'qddelta': 0.1, 'alat_max': 10, 'a_min': -5, "
                    "'a_max': 5, 'v_min': 1, 'v_max': 5, "
                    "'track_safety_margin': 0.45}.",
}


class TestDriveReward:
    def test_no_improvement(self):
        assert r_drive(2.0, 2.0) == 0.0

    def test_clip_floor(self):
        assert r_drive(2.0, 12.0) == -4.0

    def test_relative_improvement(self):
        assert r_drive(2.1, 0.21) == pytest.approx(0.9)

    def test_degenerate_baseline(self):
        assert r_drive(0.0, 0.0) == 0.0
        assert r_drive(0.0, 0.5) == -4.0

    def test_negative_inputs_rejected(self):
        with pytest.raises(ValueError):
            r_drive(-1.0, 0.0)

    @settings(max_examples=300, deadline=None)
    @given(e_mpc=st.floats(1e-9, 1e6),
           e_llm=st.one_of(st.just(0.0), st.floats(1e-9, 1e9)),
           c=st.floats(1e-6, 1e6))
    def test_range_and_scale_invariance(self, e_mpc, e_llm, c):
        # e_llm below one ulp of e_mpc rounds the ratio to exactly 1.0, so the
        # "equals 1 only for a perfect lap" claim is tested at representable scales
        r = r_drive(e_mpc, e_llm)
        assert -4.0 <= r <= 1.0
        if e_llm == 0.0 or e_llm > 1e-12 * e_mpc:
            assert (r == 1.0) == (e_llm == 0.0)
        assert r_drive(c * e_mpc, c * e_llm) == pytest.approx(r, abs=1e-12)

    @settings(max_examples=200, deadline=None)
    @given(e_mpc=st.floats(1e-6, 1e6),
           a=st.floats(0, 1e6), b=st.floats(0, 1e6))
    def test_monotone_in_e_llm(self, e_mpc, a, b):
        lo, hi = min(a, b), max(a, b)
        assert r_drive(e_mpc, lo) >= r_drive(e_mpc, hi)

    def test_perfect_improvement_boundary(self):
        assert r_drive(1.5, 0.0) == 1.0


class TestFormat:
    def test_decision_full(self):
        assert score_format("<reasoning>ok</reasoning><answer>yes</answer>",
                            "decision") == 0.5

    def test_nothing(self):
        assert score_format("free text with no tags at all", "decision") == 0.0
        assert score_format("free text with no tags at all", "mpc") == 0.0

    def test_mpc_full(self):
        text = "<reasoning>lower speed</reasoning> new_mpc_params = {'qv': 10}"
        assert score_format(text, "mpc") == 0.5

    def test_mpc_assignment_only(self):
        assert score_format("new_mpc_params = {'qv': 10}", "mpc") == 0.25

    def test_answer_only(self):
        assert score_format("<answer>no</answer>", "decision") == 0.25

    def test_double_reasoning_blocks_score_nothing_for_reasoning(self):
        text = ("<reasoning>a</reasoning><reasoning>b</reasoning>"
                "<answer>yes</answer>")
        assert score_format(text, "decision") == 0.25

    def test_mpc_assignment_must_follow_reasoning(self):
        text = "new_mpc_params = {'qv': 10} <reasoning>late</reasoning>"
        assert score_format(text, "mpc") == 0.25  # reasoning block only

    def test_unknown_family(self):
        with pytest.raises(ValueError):
            score_format("x", "other")


class TestExtractParams:
    def test_canned_smooth_response(self):
        params = extract_params(CANNED_RESPONSES["smooth_at_2"])
        assert len(params) == 7
        assert params["qalpha"] == 7.0
        assert params["v_max"] == 2.0

    def test_canned_bare_key_response(self):
        assert extract_params(CANNED_RESPONSES["reverse"]) == {
            "v_max": -1.0, "v_min": -2.0}

    def test_canned_full_default_response(self):
        params = extract_params(CANNED_RESPONSES["drive_normal"])
        assert len(params) == 11
        assert params["track_safety_margin"] == 0.45

    def test_malformed_value(self):
        with pytest.raises(ExtractionError):
            extract_params("new_mpc_params = {qv: }")

    def test_missing_assignment(self):
        with pytest.raises(ExtractionError):
            extract_params("the weather is lovely")

    def test_unbalanced_braces(self):
        with pytest.raises(ExtractionError):
            extract_params("new_mpc_params = {qv: 1")

    def test_non_numeric_value(self):
        with pytest.raises(ExtractionError):
            extract_params("new_mpc_params = {qv: high}")

    def test_last_assignment_wins(self):
        text = ("new_mpc_params = {qv: 1}\nactually no\n"
                "new_mpc_params = {qv: 2}")
        assert extract_params(text) == {"qv": 2.0}

    def test_trailing_comma_and_newlines(self):
        text = "new_mpc_params = {\n    'qv': 12,\n    v_min: -0.5,\n}"
        assert extract_params(text) == {"qv": 12.0, "v_min": -0.5}

    def test_duplicate_key_keeps_last(self):
        assert extract_params("new_mpc_params = {qv: 1, qv: 3}") == {"qv": 3.0}

    def test_empty_dict_is_valid_identity(self):
        assert extract_params("new_mpc_params = {}") == {}

    @settings(max_examples=300, deadline=None)
    @given(st.text(max_size=400))
    def test_parser_totality(self, text):
        try:
            out = extract_params(text)
            assert isinstance(out, dict)
        except ExtractionError:
            pass


class TestScoreDecision:
    def test_correct_and_formatted(self):
        b = score_decision("<reasoning>r</reasoning><answer>yes</answer>",
                           AdherenceLabel(1, "rule", 0.0))
        assert b.r_accuracy == 1.0 and b.r_fmt == 0.5
        assert b.total == pytest.approx(1.5)

    def test_wrong_answer_block_only(self):
        b = score_decision("<answer>no</answer>", AdherenceLabel(1, "rule", 0.0))
        assert b.r_accuracy == 0.0 and b.r_fmt == 0.25
        assert b.total == pytest.approx(0.25)

    def test_unparseable_scores_zero(self):
        b = score_decision("the car reverses", AdherenceLabel(1, "rule", 0.0))
        assert b.total == 0.0
        assert b.extraction_failure

    def test_parse_answer_case_and_last(self):
        assert parse_answer("<answer> YES </answer>") == "yes"
        assert parse_answer("<answer>no</answer> <answer>yes</answer>") == "yes"
        assert parse_answer("<answer>maybe</answer>") is None


class TestClosedLoopScoring:
    def test_crash_params_score_floor(self, circle_track):
        from driverl.episodes import EpisodeEnvironment
        from driverl.rewards import score_mpc_completion
        from driverl.behaviors import TRAIN_BEHAVIORS
        env = EpisodeEnvironment(circle_track)
        completion = ("<reasoning>squeeze</reasoning>\n"
                      "new_mpc_params = {'track_safety_margin': 2.0}")
        breakdown, detail = score_mpc_completion(completion, TRAIN_BEHAVIORS[0],
                                                 env)
        assert not breakdown.extraction_failure
        assert breakdown.r_param == 0.25
        assert breakdown.r_drive == -4.0
        assert detail["crashed"] is True

    def test_unknown_key_is_extraction_failure(self, circle_track):
        from driverl.episodes import EpisodeEnvironment
        from driverl.rewards import score_mpc_completion
        from driverl.behaviors import TRAIN_BEHAVIORS
        env = EpisodeEnvironment(circle_track)
        breakdown, detail = score_mpc_completion(
            "new_mpc_params = {'foo': 1}", TRAIN_BEHAVIORS[0], env)
        assert breakdown.extraction_failure
        assert breakdown.r_param == 0.0
        assert breakdown.r_drive is None
        assert breakdown.total == breakdown.r_fmt
        assert detail == {}


class TestBreakdownSerialization:
    def test_absent_components_omitted(self):
        b = RewardBreakdown(r_fmt=0.5, r_accuracy=1.0)
        d = b.to_dict()
        assert "r_drive" not in d and "r_param" not in d
        assert d["total"] == pytest.approx(1.5)

    def test_total_sums_present(self):
        b = RewardBreakdown(r_fmt=0.5, r_drive=0.9, r_param=0.25)
        assert b.total == pytest.approx(1.65)
        assert list(b.to_dict()) == ["r_drive", "r_fmt", "r_param", "total",
                                     "extraction_failure"]
