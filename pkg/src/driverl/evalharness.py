"""Control-adaptability and decision-accuracy evaluation pipelines.

``run_control_eval`` reproduces the control-adaptation table: every evaluation
behavior phrasing is rendered into a task, completed by the policy under test,
scored through the rollout service, and aggregated into per-metric errors and
an overall improvement percentage (the arithmetic mean of the four per-metric
relative improvements, negative values allowed). Averages computed after
dropping extraction failures are flagged, mirroring the dagger convention.

Policies are anything with ``complete(prompt) -> str``; scripted mocks and an
oracle with hand-tuned parameters per behavior ship here, plus an HTTP policy
for live endpoints (POST {"prompt": ...} -> {"completion": ...}).
"""

from __future__ import annotations

import json
import urllib.request
from dataclasses import dataclass

from .behaviors import (EVAL_BEHAVIORS, METRIC_IDS, TRAIN_BEHAVIORS,
                        BehaviorSpec, label_adherence)
from .dataset import DecisionInstance, instance_behavior, score_accuracy
from .mpc import default_params
from .rewards import parse_answer
from .service import RolloutService

KINDS = ("centerline", "velocity", "reversing", "smooth")
METRIC_BY_KIND = dict(zip(KINDS, METRIC_IDS))


class HarnessError(RuntimeError):
    """Policy unreachable or structurally unusable."""


@dataclass
class MetricReport:
    metric_id: str
    e_policy: float | None
    e_default: float
    improvement_pct: float | None
    runs: int
    failures: int
    excluded_failures: bool  # dagger: averages computed without failed runs


@dataclass
class ControlEvalReport:
    map_id: str
    per_metric: dict[str, MetricReport]
    extraction_failures: int
    improvement_overall: float | None
    runs_per_behavior: int

    def to_dict(self) -> dict:
        return {
            "map_id": self.map_id,
            "runs_per_behavior": self.runs_per_behavior,
            "extraction_failures": self.extraction_failures,
            "improvement_overall_pct": self.improvement_overall,
            "per_metric": {
                mid: {
                    "e_policy": m.e_policy, "e_default": m.e_default,
                    "improvement_pct": m.improvement_pct, "runs": m.runs,
                    "failures": m.failures, "excluded_failures": m.excluded_failures,
                } for mid, m in self.per_metric.items()
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def table(self) -> str:
        """Aligned text table mirroring the published layout."""
        head = (f"{'':12s} " + " ".join(f"{m:>12s}" for m in METRIC_IDS)
                + f" {'ExtFail':>8s} {'Improve%':>9s}")
        def fmt(m: MetricReport) -> str:
            if m.e_policy is None:
                return f"{'--':>12s}"
            mark = "\u2020" if m.excluded_failures else ""
            return f"{m.e_policy:>10.3f}{mark:1s} "
        row_default = (f"{'default':12s} "
                       + " ".join(f"{self.per_metric[m].e_default:>12.3f}"
                                  for m in METRIC_IDS)
                       + f" {'-':>8s} {'-':>9s}")
        overall = ("-" if self.improvement_overall is None
                   else f"{self.improvement_overall:.1f}")
        row_policy = (f"{'policy':12s} " + " ".join(fmt(self.per_metric[m])
                                                    for m in METRIC_IDS)
                      + f" {self.extraction_failures:>8d} {overall:>9s}")
        return "\n".join([head, row_default, row_policy]) + "\n"


def aggregate_improvement(per_metric_improvements) -> float:
    """Mean of exactly four per-metric improvement percentages."""
    values = list(per_metric_improvements)
    if len(values) != 4:
        raise ValueError(f"expected exactly 4 improvement values, got {len(values)}")
    return float(sum(values)) / 4.0


def run_control_eval(policy, map_id: str, runs: int = 5,
                     service: RolloutService | None = None) -> ControlEvalReport:
    """Score the policy on every evaluation phrasing and aggregate."""
    if runs < 1:
        raise ValueError("runs must be >= 1")
    service = service or RolloutService()
    failures_total = 0
    per_metric: dict[str, MetricReport] = {}
    for kind in KINDS:
        phrasings = [b for b in EVAL_BEHAVIORS if b.kind == kind][:runs]
        e_pol: list[float] = []
        e_def: list[float] = []
        failures = 0
        for behavior in phrasings:
            task = service.create_behavior_task(behavior.behavior_id, map_id)
            try:
                completion = policy.complete(task["prompt"])
            except Exception as exc:
                raise HarnessError(f"policy failed on '{behavior.behavior_id}': {exc}")
            response = json.loads(service.handle_score_request(
                {"task_id": task["task_id"], "completions": [completion]}))
            e_def.append(response["e_mpc"])
            e = response["e_llm_per_completion"][0]
            if response["rewards"][0]["extraction_failure"] or e is None:
                failures += 1
            else:
                e_pol.append(e)
        failures_total += failures
        e_default = sum(e_def) / len(e_def)
        if e_pol:
            e_policy = sum(e_pol) / len(e_pol)
            improvement = 100.0 * (e_default - e_policy) / e_default
        else:
            e_policy, improvement = None, None
        per_metric[METRIC_BY_KIND[kind]] = MetricReport(
            metric_id=METRIC_BY_KIND[kind], e_policy=e_policy, e_default=e_default,
            improvement_pct=improvement, runs=len(phrasings), failures=failures,
            excluded_failures=failures > 0 and bool(e_pol))
    improvements = [m.improvement_pct for m in per_metric.values()]
    overall = (aggregate_improvement(improvements)
               if all(v is not None for v in improvements) else None)
    return ControlEvalReport(map_id=map_id, per_metric=per_metric,
                             extraction_failures=failures_total,
                             improvement_overall=overall, runs_per_behavior=runs)


# -- policies -------------------------------------------------------------------------


def _params_completion(overrides: dict, reasoning: str) -> str:
    body = ", ".join(f"'{k}': {v}" for k, v in overrides.items())
    return (f"<reasoning>{reasoning}</reasoning>\n"
            f"new_mpc_params = {{{body}}}\n")


class MockDefaultPolicy:
    """Always answers with the full default parameter dictionary."""

    def complete(self, prompt: str) -> str:
        return _params_completion(default_params().as_dict(),
                                  "Keep the default tuning.")


class GarbagePolicy:
    """Never produces a parseable parameter assignment."""

    def complete(self, prompt: str) -> str:
        return "I would rather talk about the weather."


ORACLE_PARAMS_BY_KIND = {
    "centerline": {"track_safety_margin": 1.2, "v_max": 3.0, "qn": 30},
    "reversing": {"v_min": -2, "v_max": -1},
    "smooth": {"qac": 5, "qddelta": 5, "alat_max": 1.5, "v_min": 0.5, "v_max": 2.0},
}


def oracle_params_for(behavior: BehaviorSpec) -> dict:
    if behavior.kind == "velocity":
        v = behavior.v_ref
        return {"v_min": round(v - 0.05, 3), "v_max": round(v + 0.05, 3), "qv": 50}
    return dict(ORACLE_PARAMS_BY_KIND[behavior.kind])


class OraclePolicy:
    """Hand-tuned parameters per behavior, keyed by the quoted prompt text."""

    def __init__(self):
        self._by_prompt = {b.prompt_text: oracle_params_for(b)
                           for b in TRAIN_BEHAVIORS + EVAL_BEHAVIORS}

    def complete(self, prompt: str) -> str:
        for text, params in self._by_prompt.items():
            if f'"{text}"' in prompt:
                return _params_completion(params, f"Tuned for: {text}")
        raise HarnessError("no known behavior text found in prompt")


class HttpPolicy:
    """POST {"prompt": ...} to an external endpoint; expects {"completion": ...}."""

    def __init__(self, url: str, timeout: float = 60.0):
        self.url = url
        self.timeout = timeout

    def complete(self, prompt: str) -> str:
        req = urllib.request.Request(
            self.url, data=json.dumps({"prompt": prompt}).encode(),
            headers={"Content-Type": "application/json"})
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                return json.loads(resp.read().decode())["completion"]
        except Exception as exc:
            raise HarnessError(f"policy endpoint unreachable: {exc}") from exc


def control_policy(name: str):
    if name == "mock-default":
        return MockDefaultPolicy()
    if name == "mock-garbage":
        return GarbagePolicy()
    if name == "oracle":
        return OraclePolicy()
    if name.startswith("http://") or name.startswith("https://"):
        return HttpPolicy(name)
    raise ValueError(f"unknown policy '{name}'")


# -- decision pipeline ------------------------------------------------------------------


def rule_oracle_answers(instances: list[DecisionInstance]) -> list[str]:
    """Recompute each label with the rule engine; yields perfect answers."""
    return ["yes" if label_adherence(i.history, instance_behavior(i)).adheres
            else "no" for i in instances]


def constant_answers(instances: list[DecisionInstance], answer: str) -> list[str]:
    return [answer] * len(instances)


def run_decision_eval(instances: list[DecisionInstance], answerer: str,
                      policy=None, service: RolloutService | None = None) -> dict:
    """Score an answer source on a decision corpus.

    ``answerer``: rule-oracle | always-yes | always-no | policy (text policy
    completing rendered prompts).
    """
    if answerer == "rule-oracle":
        answers = rule_oracle_answers(instances)
    elif answerer == "always-yes":
        answers = constant_answers(instances, "yes")
    elif answerer == "always-no":
        answers = constant_answers(instances, "no")
    elif answerer == "policy":
        if policy is None:
            raise ValueError("answerer 'policy' needs a policy object")
        from .rag import builtin_memories
        from .service import render_decision_prompt
        hints_store = builtin_memories("decision_hint")
        answers = []
        for inst in instances:
            prompt = render_decision_prompt(inst, hints_store.retrieve(inst.prompt, 5))
            answers.append(parse_answer(policy.complete(prompt)))
    else:
        raise ValueError(f"unknown answerer '{answerer}'")
    accuracy = score_accuracy(instances, answers)
    positives = sum(i.label for i in instances)
    return {
        "accuracy_pct": accuracy,
        "count": len(instances),
        "positive_rate_pct": 100.0 * positives / len(instances),
        "answerer": answerer,
    }
