"""Scripted policies for tests and as reference implementations.

A policy is anything with ``generate(prompt, n) -> list[str]`` and
``update(sample) -> None``; real model fine-tuning attaches behind the same
two methods.
"""

from __future__ import annotations

import random
from typing import Protocol, runtime_checkable

from .loop import GroupSample

DEFAULT_PARAMS_TEXT = (
    "<reasoning>Keep the defaults.</reasoning>\n"
    "new_mpc_params = {'qv': 10, 'qn': 20, 'qalpha': 7, 'qac': 0.01, "
    "'qddelta': 0.1, 'alat_max': 10, 'a_min': -5, 'a_max': 5, 'v_min': 1, "
    "'v_max': 5, 'track_safety_margin': 0.45}")

EXPLORATION_POOL = (
    "hmm, not sure what to do here",
    "<reasoning>slow and steady</reasoning>\n"
    "new_mpc_params = {'v_min': 1.78, 'v_max': 1.88, 'qv': 50}",
    "<reasoning>back it up</reasoning>\nnew_mpc_params = {v_min: -2, v_max: -1}",
    "<reasoning>gentle inputs</reasoning>\n"
    "new_mpc_params = {'qac': 5, 'qddelta': 5, 'alat_max': 1.5, 'v_min': 0.5, "
    "'v_max': 2.0}",
    "<reasoning>hug the middle</reasoning>\n"
    "new_mpc_params = {'track_safety_margin': 1.2, 'v_max': 3.0, 'qn': 30}",
    DEFAULT_PARAMS_TEXT,
    "new_mpc_params = {'made_up_knob': 1}",
)


@runtime_checkable
class Policy(Protocol):
    def generate(self, prompt: str, n: int) -> list[str]: ...

    def update(self, sample: GroupSample) -> None: ...


class NoOpPolicy:
    """Emits a fixed completion and learns nothing."""

    def __init__(self, text: str = DEFAULT_PARAMS_TEXT):
        self.text = text

    def generate(self, prompt: str, n: int) -> list[str]:
        return [self.text] * n

    def update(self, sample: GroupSample) -> None:
        pass


class RewardGreedyPolicy:
    """Remembers the best-scoring completion per prompt and keeps exploring.

    Every group contains the remembered best (when one exists) plus seeded
    draws from an exploration pool, so the best-in-group reward never drops
    for a fixed prompt.
    """

    def __init__(self, seed: int = 0, pool: tuple[str, ...] = EXPLORATION_POOL):
        self._rng = random.Random(seed)
        self._pool = pool
        self._best: dict[str, tuple[float, str]] = {}

    def generate(self, prompt: str, n: int) -> list[str]:
        out: list[str] = []
        known = self._best.get(prompt)
        if known is not None:
            out.append(known[1])
        while len(out) < n:
            out.append(self._pool[self._rng.randrange(len(self._pool))])
        return out[:n]

    def update(self, sample: GroupSample) -> None:
        best_i = max(range(len(sample.rewards)), key=lambda i: sample.rewards[i])
        incumbent = self._best.get(sample.prompt)
        if incumbent is None or sample.rewards[best_i] > incumbent[0]:
            self._best[sample.prompt] = (sample.rewards[best_i],
                                         sample.completions[best_i])
