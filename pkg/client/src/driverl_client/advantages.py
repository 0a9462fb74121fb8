"""Group-relative advantage normalization."""

from __future__ import annotations

import math

EPS = 1e-6


def group_advantages(rewards: list[float]) -> list[float]:
    """(r_i - mean) / max(std, eps) with the population std convention.

    All-equal groups (including singletons) normalize to zeros rather than
    dividing by a vanishing spread.
    """
    if not rewards:
        raise ValueError("rewards must be non-empty")
    n = len(rewards)
    mean = sum(rewards) / n
    var = sum((r - mean) ** 2 for r in rewards) / n
    scale = max(math.sqrt(var), EPS)
    return [(r - mean) / scale for r in rewards]
