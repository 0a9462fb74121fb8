"""Verifiable rewards over raw completion text.

Two reward families share the formatting component:

  decision:  total = r_accuracy + r_fmt
  mpc:       total = r_drive + r_fmt + r_param

Formatting gives 0.25 for exactly one well-nested <reasoning> block and 0.25
for a well-formed answer section (an <answer>yes|no</answer> block for the
decision family; a ``new_mpc_params = {...}`` assignment for the mpc family).
Parameter extraction is strict: unknown keys, malformed values, and range-rule
violations all count as extraction failures, which score r_param = 0 and run
no lap.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .behaviors import AdherenceLabel, BehaviorSpec
from .episodes import EpisodeEnvironment, drive_reward
from .mpc import InvalidParameterError, validate_params

FMT_BLOCK_REWARD = 0.25
PARAM_REWARD = 0.25

_REASONING_OPEN = re.compile(r"<reasoning>")
_REASONING_CLOSE = re.compile(r"</reasoning>")
_ANSWER_RE = re.compile(r"<answer>\s*(yes|no)\s*</answer>", re.IGNORECASE | re.DOTALL)
_ASSIGN_RE = re.compile(r"new_mpc_params\s*=\s*\{")
_KEY_RE = re.compile(r"^(?:'([A-Za-z_][A-Za-z0-9_]*)'|\"([A-Za-z_][A-Za-z0-9_]*)\"|"
                     r"([A-Za-z_][A-Za-z0-9_]*))$")
_NUMBER_RE = re.compile(r"^[+-]?(?:\d+\.?\d*|\.\d+)$")


class ExtractionError(ValueError):
    """No valid parameter map could be extracted from the completion."""


@dataclass(frozen=True)
class RewardBreakdown:
    """Per-completion reward components; absent components are None."""

    r_fmt: float
    r_drive: float | None = None
    r_param: float | None = None
    r_accuracy: float | None = None
    extraction_failure: bool = False

    @property
    def total(self) -> float:
        present = [c for c in (self.r_drive, self.r_fmt, self.r_param,
                               self.r_accuracy) if c is not None]
        return float(sum(present))

    def to_dict(self) -> dict:
        out = {}
        if self.r_drive is not None:
            out["r_drive"] = self.r_drive
        out["r_fmt"] = self.r_fmt
        if self.r_param is not None:
            out["r_param"] = self.r_param
        if self.r_accuracy is not None:
            out["r_accuracy"] = self.r_accuracy
        out["total"] = self.total
        out["extraction_failure"] = self.extraction_failure
        return out


def r_drive(e_mpc: float, e_llm: float) -> float:
    """Clipped relative improvement of the adapted lap over the baseline."""
    return drive_reward(e_mpc, e_llm)


def _reasoning_span(text: str) -> tuple[int, int] | None:
    """(start, end) of the single well-nested reasoning block, else None."""
    opens = [m.start() for m in _REASONING_OPEN.finditer(text)]
    closes = [m.end() for m in _REASONING_CLOSE.finditer(text)]
    if len(opens) == 1 and len(closes) == 1 and opens[0] < closes[0]:
        return opens[0], closes[0]
    return None


def parse_answer(text: str) -> str | None:
    """The yes/no verdict of the last well-formed answer block, if any."""
    matches = _ANSWER_RE.findall(text)
    return matches[-1].lower() if matches else None


def score_format(completion: str, family: str) -> float:
    """Formatting reward in {0, 0.25, 0.5}."""
    if family not in ("decision", "mpc"):
        raise ValueError(f"unknown reward family '{family}'")
    score = 0.0
    span = _reasoning_span(completion)
    if span is not None:
        score += FMT_BLOCK_REWARD
    if family == "decision":
        if len(_ANSWER_RE.findall(completion)) == 1:
            score += FMT_BLOCK_REWARD
    else:
        tail = completion[span[1]:] if span is not None else completion
        if _find_assignment(tail) is not None:
            score += FMT_BLOCK_REWARD
    return score


def _find_assignment(text: str) -> str | None:
    """Body of the last ``new_mpc_params = {...}`` assignment; None when the
    assignment is missing or its braces never balance."""
    matches = list(_ASSIGN_RE.finditer(text))
    if not matches:
        return None
    start = matches[-1].end()
    depth = 1
    for i in range(start, len(text)):
        ch = text[i]
        if ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return text[start:i]
    return None


def extract_params(completion: str) -> dict[str, float]:
    """Parse the last ``new_mpc_params`` assignment into a name->number map.

    Keys may be bare or quoted identifiers; values are plain decimal numbers.
    Raises ExtractionError for a missing assignment, unbalanced braces, or a
    malformed entry. Duplicate keys keep the last occurrence.
    """
    if _ASSIGN_RE.search(completion) is None:
        raise ExtractionError("no new_mpc_params assignment found")
    body = _find_assignment(completion)
    if body is None:
        raise ExtractionError("unbalanced braces in new_mpc_params assignment")
    out: dict[str, float] = {}
    for chunk in body.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue  # tolerate trailing commas and blank entries
        if ":" not in chunk:
            raise ExtractionError(f"expected 'key: value', got '{chunk}'")
        key_part, value_part = chunk.split(":", 1)
        key_m = _KEY_RE.match(key_part.strip())
        if key_m is None:
            raise ExtractionError(f"malformed key '{key_part.strip()}'")
        value_s = value_part.strip()
        if not _NUMBER_RE.match(value_s):
            raise ExtractionError(f"malformed value '{value_s}'")
        key = next(g for g in key_m.groups() if g is not None)
        out[key] = float(value_s)
    return out


def score_decision(completion: str, label: AdherenceLabel) -> RewardBreakdown:
    """Accuracy + formatting reward for a behavior-adherence verdict."""
    fmt = score_format(completion, "decision")
    answer = parse_answer(completion)
    if answer is None:
        return RewardBreakdown(r_fmt=fmt, r_accuracy=0.0, extraction_failure=True)
    correct = (answer == "yes") == bool(label.adheres)
    return RewardBreakdown(r_fmt=fmt, r_accuracy=1.0 if correct else 0.0)


def score_mpc_completion(completion: str, behavior: BehaviorSpec,
                         env: EpisodeEnvironment) -> tuple[RewardBreakdown, dict]:
    """Full closed-loop scoring of one mpc-family completion.

    Returns the breakdown plus a detail dict with server-side E values when a
    lap ran ({} on extraction failure).
    """
    fmt = score_format(completion, "mpc")
    try:
        raw = extract_params(completion)
        params = validate_params(raw)
    except (ExtractionError, InvalidParameterError):
        return (RewardBreakdown(r_fmt=fmt, r_param=0.0, extraction_failure=True), {})
    episode = env.run_episode(params, behavior)
    breakdown = RewardBreakdown(r_fmt=fmt, r_param=PARAM_REWARD,
                                r_drive=episode.r_drive)
    detail = {"e_mpc": episode.e_mpc, "e_llm": episode.e_llm,
              "crashed": episode.crashed}
    return breakdown, detail
