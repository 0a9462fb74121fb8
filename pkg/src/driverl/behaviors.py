"""Behavior sets, behavior-conditioned RMSE metrics, and adherence labeling.

The four training behaviors and the twenty rephrased evaluation behaviors are
fixed data assets (including the intentional "Adjsut" spelling in one
evaluation prompt — scorers must see the exact text models see).
Every behavior is scored by one of four RMSE metrics:

    E_C  distance to the centerline
    E_V  deviation from the prompt's reference velocity
    E_R  deviation from -1 m/s (reversing)
    E_S  deviation from zero acceleration (combined longitudinal + lateral)

Adherence labels are deterministic threshold rules on those metrics; reversing
uses a sample-fraction rule instead (label 1 when at least 90% of samples move
backward).
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from importlib import resources

import numpy as np

METRIC_IDS = ("E_C", "E_V", "E_R", "E_S")

CENTERLINE_RMSE_MAX = 0.2  # m
VELOCITY_RMSE_MAX = 0.3  # m/s
SMOOTH_RMSE_MAX = 1.0  # m/s^2
RACELINE_RMSE_MAX = 0.2  # m
REVERSING_FRACTION_MIN = 0.9


class InvalidTraceError(ValueError):
    """Raised for empty traces or windows."""


@dataclass(frozen=True)
class BehaviorSpec:
    """One prompted driving behavior and the metric that scores it."""

    behavior_id: str
    kind: str  # centerline | velocity | reversing | smooth | raceline
    prompt_text: str
    metric_id: str
    v_ref: float | None = None

    def __post_init__(self):
        if not self.prompt_text:
            raise ValueError("prompt_text must be non-empty")
        if self.kind == "velocity" and (self.v_ref is None or self.v_ref <= 0):
            raise ValueError("velocity behaviors need v_ref > 0")


@dataclass(frozen=True)
class AdherenceLabel:
    adheres: int  # 1 adherence, 0 non-adherence
    rule_id: str
    evidence: float


def _b(behavior_id, kind, prompt, metric, v_ref=None):
    return BehaviorSpec(behavior_id=behavior_id, kind=kind, prompt_text=prompt,
                        metric_id=metric, v_ref=v_ref)


TRAIN_BEHAVIORS: tuple[BehaviorSpec, ...] = (
    _b("train/centerline", "centerline", "Drive on the centerline", "E_C"),
    _b("train/velocity", "velocity", "Drive at 1.83 m/s as closely as possible",
       "E_V", v_ref=1.83),
    _b("train/reversing", "reversing", "Reverse the car", "E_R"),
    _b("train/smooth", "smooth", "Drive smoothly", "E_S"),
)

_EVAL_CENTERLINE = (
    "Stay directly on the middle of the track",
    "Follow the track by staying aligned with the middle of the track",
    "Drive away as far as possible from the walls",
    "Ensure that the distance to the left and right wall remain the same",
    "Drive on the centerline",
)
_EVAL_VELOCITY = (
    ("Set the driving speed to 3.5 m/s", 3.5),
    ("Target a driving speed of 2.2 meters per second", 2.2),
    ("Move at a constant speed of 1.25 m/s", 1.25),
    ("Travel at 2.9 meters per second", 2.9),
    ("Adjsut the speed to exactly 4.5 m/s", 4.5),  # sic, verbatim prompt
)
_EVAL_REVERSING = (
    "Slowly back the vehicle up",
    "Reverse the vehicle",
    "Switch to reverse and drive backwards",
    "Retreat by reversing the car",
    "Drive the car backwards",
)
_EVAL_SMOOTH = (
    "Drive in a fluid and controlled manner",
    "Maintain low jerk and high smoothness in driving behavior",
    "Focus on smooth driving",
    "Drive smoothly",
    "Reduce lateral acceleration",
)

EVAL_BEHAVIORS: tuple[BehaviorSpec, ...] = tuple(
    [_b(f"eval/centerline_{i}", "centerline", p, "E_C")
     for i, p in enumerate(_EVAL_CENTERLINE)]
    + [_b(f"eval/velocity_{i}", "velocity", p, "E_V", v_ref=v)
       for i, (p, v) in enumerate(_EVAL_VELOCITY)]
    + [_b(f"eval/reversing_{i}", "reversing", p, "E_R")
       for i, p in enumerate(_EVAL_REVERSING)]
    + [_b(f"eval/smooth_{i}", "smooth", p, "E_S") for i, p in enumerate(_EVAL_SMOOTH)]
)

_BY_ID = {b.behavior_id: b for b in TRAIN_BEHAVIORS + EVAL_BEHAVIORS}


def behavior_by_id(behavior_id: str) -> BehaviorSpec:
    try:
        return _BY_ID[behavior_id]
    except KeyError:
        raise KeyError(f"unknown behavior_id '{behavior_id}'") from None


def sample_behavior(set_id: str, index: int, seed: int = 0) -> BehaviorSpec:
    """Index into the training or evaluation behavior set.

    Training indices past the canonical four generate fresh velocity behaviors
    whose target speed is randomized from (seed, index).
    """
    if set_id == "train":
        if index < 0:
            raise IndexError("behavior index must be nonnegative")
        if index < len(TRAIN_BEHAVIORS):
            return TRAIN_BEHAVIORS[index]
        rng = random.Random(seed * 1000003 + index)
        v = round(rng.uniform(0.5, 4.5), 2)
        return _b(f"train/velocity_gen_{index}_{seed}", "velocity",
                  f"Drive at {v} m/s as closely as possible", "E_V", v_ref=v)
    if set_id == "eval":
        if not 0 <= index < len(EVAL_BEHAVIORS):
            raise IndexError(f"eval behavior index {index} out of range [0, 20)")
        return EVAL_BEHAVIORS[index]
    raise ValueError(f"unknown behavior set '{set_id}'")


# -- metrics ---------------------------------------------------------------------


def _arrays(trace) -> dict[str, np.ndarray]:
    arr = trace.arrays() if hasattr(trace, "arrays") else trace
    if len(arr["v"]) == 0:
        raise InvalidTraceError("empty trace")
    return arr


def _rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.square(x))))


def smoothness_rmse(trace, include_lateral: bool = True) -> float:
    """RMS deviation from zero acceleration; lateral included by default."""
    arr = _arrays(trace)
    if include_lateral:
        return _rms(np.sqrt(arr["a"] ** 2 + arr["a_lat"] ** 2))
    return _rms(arr["a"])


def metric_rmse(trace, behavior: BehaviorSpec) -> float:
    """Behavior-conditioned RMSE over a trace (partial traces included: the
    reward layer, not the metric, penalizes crashes)."""
    arr = _arrays(trace)
    if behavior.kind == "centerline":
        return _rms(arr["n_center"])
    if behavior.kind == "velocity":
        return _rms(arr["v"] - behavior.v_ref)
    if behavior.kind == "reversing":
        return _rms(arr["v"] - (-1.0))
    if behavior.kind == "smooth":
        return smoothness_rmse(arr)
    if behavior.kind == "raceline":
        return _rms(arr["n"])
    raise ValueError(f"unknown behavior kind '{behavior.kind}'")


def label_adherence(trace, behavior: BehaviorSpec) -> AdherenceLabel:
    """Binary adherence label from the deterministic rule for the behavior."""
    arr = _arrays(trace)
    if behavior.kind == "reversing":
        frac = float(np.mean(arr["v"] < 0.0))
        return AdherenceLabel(int(frac >= REVERSING_FRACTION_MIN),
                              "reversing_fraction", frac)
    value = metric_rmse(arr, behavior)
    threshold = {
        "centerline": CENTERLINE_RMSE_MAX,
        "velocity": VELOCITY_RMSE_MAX,
        "smooth": SMOOTH_RMSE_MAX,
        "raceline": RACELINE_RMSE_MAX,
    }[behavior.kind]
    return AdherenceLabel(int(value < threshold), f"{behavior.kind}_rmse", value)


# -- serialization -----------------------------------------------------------------


def behavior_sets_json() -> str:
    """The behavior sets as the shipped JSON asset text."""
    def enc(b: BehaviorSpec) -> dict:
        out = {"behavior_id": b.behavior_id, "kind": b.kind,
               "prompt": b.prompt_text, "metric_id": b.metric_id}
        if b.v_ref is not None:
            out["v_ref"] = b.v_ref
        return out

    doc = {
        "schema_version": 1,
        "train": [enc(b) for b in TRAIN_BEHAVIORS],
        "eval": [enc(b) for b in EVAL_BEHAVIORS],
    }
    return json.dumps(doc, indent=2) + "\n"


def load_behavior_asset() -> dict:
    text = resources.files("driverl").joinpath("assets/behaviors.json").read_text("utf-8")
    return json.loads(text)
