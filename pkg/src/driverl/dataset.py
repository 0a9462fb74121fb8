"""Labeled behavior-adherence corpus generated from styled simulation laps.

Eight driving styles (each a tunable-parameter preset) produce state
histories; eight adherence questions pair with every history; labels come from
the deterministic rules in :mod:`driverl.behaviors`. The default configuration
yields 8 styles x 25 windows = 200 histories and 200 x 8 = 1600 labeled
prompt-history pairs.

Histories are windows of 20 samples spaced 0.1 s apart, sliced from chained
laps at seeded random offsets; each sample keeps the full trace row so every
labeling rule (including smoothness, which needs accelerations) can be
recomputed from the stored history alone.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass

import numpy as np

from .behaviors import BehaviorSpec, label_adherence
from .mpc import MpcController, MpcParams, validate_params
from .simulator import LapLimits, TRACE_FIELDS, VehicleState, WHEELBASE, run_lap
from .tracks import TrackGeometry

SCHEMA_VERSION = 1
WINDOW_SAMPLES = 20
WINDOW_SPACING_S = 0.1
MAX_CHAINED_LAPS = 12


class DatasetGenerationError(RuntimeError):
    """A style's laps crashed or could not produce the requested windows."""


@dataclass(frozen=True)
class DrivingStyle:
    """A named parameter preset plus the state the style starts from.

    ``start_offset`` is a lateral offset in ``start_frame`` ("raceline" or
    "centerline"), so styles begin near their own operating point instead of
    catching a lateral transient in their first windows.
    """

    style_id: str
    overrides: dict
    start_speed: float
    start_frame: str = "raceline"
    start_offset: float = 0.0

    def params(self) -> MpcParams:
        return validate_params(dict(self.overrides))


DATASET_STYLES: tuple[DrivingStyle, ...] = (
    DrivingStyle("raceline", {}, start_speed=5.0),
    DrivingStyle("centerline",
                 {"track_safety_margin": 1.35, "v_max": 3.0, "qn": 30},
                 start_speed=2.5, start_frame="centerline"),
    DrivingStyle("velocity_1p83", {"v_min": 1.78, "v_max": 1.88, "qv": 50},
                 start_speed=1.83),
    DrivingStyle("reversing", {"v_min": -2.0, "v_max": -1.0}, start_speed=-1.5),
    DrivingStyle("smooth",
                 {"qac": 5.0, "qddelta": 5.0, "alat_max": 1.5,
                  "v_min": 0.5, "v_max": 2.0},
                 start_speed=1.5),
    DrivingStyle("stopped", {"v_min": 0.0, "v_max": 0.01}, start_speed=0.005),
    DrivingStyle("oscillatory",
                 {"qalpha": 0.0, "qn": 200, "qddelta": 0.01,
                  "track_safety_margin": 1.0, "v_max": 4.0},
                 start_speed=2.0, start_offset=0.9),
    DrivingStyle("wall_hug", {"track_safety_margin": 0.0, "qn": 60, "v_max": 2.5},
                 start_speed=2.0),
)

# the eight adherence questions; one per instance pairing
DATASET_PROMPTS: tuple[tuple[str, BehaviorSpec], ...] = (
    ("Is the car driving on the racing line?",
     BehaviorSpec("dataset/raceline", "raceline",
                  "Is the car driving on the racing line?", "E_C")),
    ("Is the car driving on the centerline?",
     BehaviorSpec("dataset/centerline", "centerline",
                  "Is the car driving on the centerline?", "E_C")),
    ("Is the car driving at 1.83 m/s?",
     BehaviorSpec("dataset/velocity_1p83", "velocity",
                  "Is the car driving at 1.83 m/s?", "E_V", v_ref=1.83)),
    ("Is the car driving at 3.5 m/s?",
     BehaviorSpec("dataset/velocity_3p5", "velocity",
                  "Is the car driving at 3.5 m/s?", "E_V", v_ref=3.5)),
    ("Is the car reversing?",
     BehaviorSpec("dataset/reversing", "reversing", "Is the car reversing?", "E_R")),
    ("Is the car driving smoothly?",
     BehaviorSpec("dataset/smooth", "smooth", "Is the car driving smoothly?", "E_S")),
    ("Is the car stopped?",
     BehaviorSpec("dataset/stopped", "velocity", "Is the car stopped?", "E_V",
                  v_ref=0.05)),
    ("Is the car driving at 5.0 m/s?",
     BehaviorSpec("dataset/velocity_5p0", "velocity",
                  "Is the car driving at 5.0 m/s?", "E_V", v_ref=5.0)),
)

# style -> prompt whose rule that style is driven to satisfy (class balance)
STYLE_TARGET_PROMPT = {
    "raceline": "Is the car driving on the racing line?",
    "centerline": "Is the car driving on the centerline?",
    "velocity_1p83": "Is the car driving at 1.83 m/s?",
    "reversing": "Is the car reversing?",
    "smooth": "Is the car driving smoothly?",
    "stopped": "Is the car stopped?",
}


@dataclass(frozen=True)
class HistoryWindow:
    """A fixed-length slice of trace rows; behaves like a trace for metrics."""

    rows: tuple[tuple, ...]  # rows of TRACE_FIELDS values

    def arrays(self) -> dict[str, np.ndarray]:
        mat = np.asarray(self.rows, dtype=float)
        return {f: mat[:, i] for i, f in enumerate(TRACE_FIELDS)}

    def states(self) -> list[VehicleState]:
        return [VehicleState(r[1], r[2], r[3], r[4], r[5]) for r in self.rows]


@dataclass(frozen=True)
class DecisionInstance:
    prompt: str
    history: HistoryWindow
    label: int
    style_id: str
    behavior_id: str


def _style_initial(track: TrackGeometry, style: DrivingStyle) -> VehicleState:
    # steady tracking needs tan(delta) = L * kappa for forward and reverse alike
    ref = track.raceline
    if style.start_frame == "centerline":
        pos = track.centerline.to_cartesian(0.0, style.start_offset)
        s_r, n_r = ref.project(pos)
    else:
        s_r, n_r = 0.0, style.start_offset
    delta = math.atan(WHEELBASE * float(ref.kappa_at(s_r)))
    return VehicleState(s=s_r, n=n_r, dphi=0.0, delta=delta, v=style.start_speed)


def _style_rows(track: TrackGeometry, style: DrivingStyle, needed_steps: int,
                limits: LapLimits) -> list[tuple]:
    """Chain laps under the style's parameters until enough trace rows exist."""
    params = style.params()
    rows: list[tuple] = []
    state = _style_initial(track, style)
    t_base = 0.0
    for _ in range(MAX_CHAINED_LAPS):
        controller = MpcController(track, params, control_period=2)
        trace = run_lap(track, controller, state, limits)
        if trace.terminated_by == "crash":
            raise DatasetGenerationError(
                f"style '{style.style_id}' crashed after {len(rows)} rows")
        for smp in trace.samples:
            r = smp.row()
            rows.append(tuple((t_base + r["t"]) if f == "t" else r[f]
                              for f in TRACE_FIELDS))
        if len(rows) >= needed_steps:
            return rows
        state = trace.samples[-1].state
        t_base += trace.samples[-1].t + limits.dt
    raise DatasetGenerationError(
        f"style '{style.style_id}' produced only {len(rows)} rows "
        f"of {needed_steps} required")


def generate_dataset(track: TrackGeometry, styles=DATASET_STYLES,
                     per_style: int = 25, seed: int = 0,
                     limits: LapLimits = LapLimits()) -> list[DecisionInstance]:
    """Generate the labeled corpus: per_style windows per style, each paired
    with every dataset prompt."""
    if not styles:
        raise ValueError("styles must be non-empty")
    if per_style < 1:
        raise ValueError("per_style must be >= 1")
    stride = max(int(round(WINDOW_SPACING_S / limits.dt)), 1)
    span = stride * (WINDOW_SAMPLES - 1) + 1
    instances: list[DecisionInstance] = []
    for style in styles:
        rng = random.Random((seed, style.style_id).__repr__())
        max_gap = 2 * stride
        budget = per_style * (span + max_gap) + span
        rows = _style_rows(track, style, budget, limits)
        pos = rng.randrange(0, max_gap + 1)
        windows: list[HistoryWindow] = []
        for _ in range(per_style):
            if pos + span > len(rows):
                raise DatasetGenerationError(
                    f"style '{style.style_id}' ran out of rows")
            windows.append(HistoryWindow(
                rows=tuple(rows[pos + j * stride] for j in range(WINDOW_SAMPLES))))
            pos += span + rng.randrange(0, max_gap + 1)
        for window in windows:
            for prompt, behavior in DATASET_PROMPTS:
                label = label_adherence(window, behavior)
                instances.append(DecisionInstance(
                    prompt=prompt, history=window, label=label.adheres,
                    style_id=style.style_id, behavior_id=behavior.behavior_id))
    return instances


def score_accuracy(instances: list[DecisionInstance],
                   answers: list[str | None]) -> float:
    """Percentage of answers matching labels; unparseable (None) counts wrong."""
    if len(instances) != len(answers):
        raise ValueError(f"{len(instances)} instances vs {len(answers)} answers")
    if not instances:
        raise ValueError("empty instance list")
    correct = 0
    for inst, ans in zip(instances, answers):
        if ans not in ("yes", "no"):
            continue
        if (ans == "yes") == bool(inst.label):
            correct += 1
    return 100.0 * correct / len(instances)


# -- serialization ------------------------------------------------------------------


def corpus_to_jsonl(instances: list[DecisionInstance], seed: int | None = None) -> str:
    header = {"schema_version": SCHEMA_VERSION, "count": len(instances),
              "fields": list(TRACE_FIELDS)}
    if seed is not None:
        header["seed"] = seed
    lines = [json.dumps(header)]
    for inst in instances:
        lines.append(json.dumps({
            "prompt": inst.prompt, "style_id": inst.style_id,
            "behavior_id": inst.behavior_id, "label": inst.label,
            "history": [list(r) for r in inst.history.rows],
        }))
    return "\n".join(lines) + "\n"


def corpus_from_jsonl(text: str) -> list[DecisionInstance]:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty corpus")
    header = json.loads(lines[0])
    if header.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported corpus schema {header.get('schema_version')}")
    behaviors = {b.behavior_id: b for _, b in DATASET_PROMPTS}
    out = []
    for ln in lines[1:]:
        rec = json.loads(ln)
        out.append(DecisionInstance(
            prompt=rec["prompt"],
            history=HistoryWindow(rows=tuple(tuple(r) for r in rec["history"])),
            label=rec["label"], style_id=rec["style_id"],
            behavior_id=rec["behavior_id"]))
    if len(out) != header.get("count", len(out)):
        raise ValueError("corpus line count does not match header")
    return out


def instance_behavior(inst: DecisionInstance) -> BehaviorSpec:
    for _, b in DATASET_PROMPTS:
        if b.behavior_id == inst.behavior_id:
            return b
    raise KeyError(inst.behavior_id)
