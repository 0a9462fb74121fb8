"""Rollout groups and the training-loop skeleton.

The loop owns none of the learning: policies implement
``generate(prompt, n) -> list[str]`` and ``update(GroupSample) -> None``, and
whatever gradient machinery they wrap stays outside this package. The loop
fetches a task, samples a completion group, scores it in one request, attaches
group-relative advantages, and hands the sample to the policy.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable

from .advantages import group_advantages
from .api import RolloutClient


@dataclass(frozen=True)
class GroupSample:
    """One scored completion group for one task."""

    task_id: str
    prompt: str
    completions: list[str]
    rewards: list[float]
    advantages: list[float]
    extraction_failures: list[bool]

    @property
    def best_reward(self) -> float:
        return max(self.rewards)

    @property
    def mean_reward(self) -> float:
        return sum(self.rewards) / len(self.rewards)


@dataclass(frozen=True)
class RunLogEntry:
    step: int
    mean_reward: float
    mean_tokens: float
    best_reward: float

    def to_json(self) -> str:
        return json.dumps({"step": self.step, "mean_reward": self.mean_reward,
                           "mean_tokens": self.mean_tokens,
                           "best_reward": self.best_reward})


def run_log_to_jsonl(entries: list[RunLogEntry]) -> str:
    return "\n".join(e.to_json() for e in entries) + ("\n" if entries else "")


def run_log_from_jsonl(text: str) -> list[RunLogEntry]:
    out = []
    for line in text.splitlines():
        if not line.strip():
            continue
        doc = json.loads(line)
        out.append(RunLogEntry(step=doc["step"], mean_reward=doc["mean_reward"],
                               mean_tokens=doc["mean_tokens"],
                               best_reward=doc["best_reward"]))
    return out


def token_count(text: str) -> int:
    """Whitespace token count; a tokenizer-free proxy for output length."""
    return len(text.split())


def rollout_group(client: RolloutClient, family: str, policy, group_size: int,
                  seed: int) -> GroupSample:
    """One task -> G completions -> one score request -> advantages."""
    if group_size < 1:
        raise ValueError("group_size must be >= 1")
    task = client.request_task(family, seed)
    completions = list(policy.generate(task["prompt"], group_size))
    if len(completions) != group_size:
        raise ValueError(f"policy produced {len(completions)} completions "
                         f"for group size {group_size}")
    response = client.score(task["task_id"], completions)
    rewards = [r["total"] for r in response["rewards"]]
    failures = [r["extraction_failure"] for r in response["rewards"]]
    return GroupSample(task_id=task["task_id"], prompt=task["prompt"],
                       completions=completions, rewards=rewards,
                       advantages=group_advantages(rewards),
                       extraction_failures=failures)


class TrainingAborted(RuntimeError):
    """A policy update failed; carries the flushed log up to that step."""

    def __init__(self, step: int, log: list[RunLogEntry], cause: Exception):
        super().__init__(f"policy update failed at step {step}: {cause}")
        self.step = step
        self.log = log


def training_loop(client: RolloutClient, policy, steps: int,
                  group_size: int = 4, family: str = "mpc",
                  seed_fn: Callable[[int], int] = lambda step: 0,
                  hooks: list[Callable] | None = None,
                  log_path: str | None = None) -> list[RunLogEntry]:
    """Repeat rollout_group + policy.update for ``steps`` iterations.

    Logs per-step mean reward, mean completion token count, and best-in-group
    reward; with ``log_path`` every entry is appended and flushed as it is
    produced. A policy.update failure raises TrainingAborted carrying the log
    written so far.
    """
    log: list[RunLogEntry] = []
    log_file = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for step in range(steps):
            sample = rollout_group(client, family, policy, group_size,
                                   seed_fn(step))
            entry = RunLogEntry(
                step=step,
                mean_reward=sample.mean_reward,
                mean_tokens=sum(token_count(c) for c in sample.completions)
                / len(sample.completions),
                best_reward=sample.best_reward)
            log.append(entry)
            if log_file:
                log_file.write(entry.to_json() + "\n")
                log_file.flush()
            for hook in hooks or ():
                hook(step, sample, entry)
            try:
                policy.update(sample)
            except Exception as exc:
                raise TrainingAborted(step, log, exc) from exc
    finally:
        if log_file:
            log_file.close()
    return log
