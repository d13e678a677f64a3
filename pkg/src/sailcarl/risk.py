"""Empirical CVaR / VaR over per-trajectory constraint costs."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class RiskConfig:
    alpha: float = 0.9
    weight: float = 0.0

    def __post_init__(self):
        _check_alpha(self.alpha)
        if self.weight < 0:
            raise ValueError("CVaR weight must be nonnegative")


def _check_alpha(alpha: float) -> None:
    if not 0.0 <= alpha < 1.0:
        raise ValueError(f"alpha must lie in [0, 1), got {alpha}")


def tail_size(n: int, alpha: float) -> int:
    # round before ceil so (1 - 0.9) * 10 counts as exactly 1
    return max(1, math.ceil(round((1.0 - alpha) * n, 9)))


def tail_indices(costs: Sequence[float], alpha: float) -> np.ndarray:
    """Indices of the worst ceil((1 - alpha) n) samples; ties go to the lower index."""
    costs = np.asarray(costs, dtype=float)
    if costs.size == 0:
        raise ValueError("costs must be nonempty")
    _check_alpha(alpha)
    order = np.lexsort((np.arange(costs.size), -costs))
    return order[: tail_size(costs.size, alpha)]


def cvar(costs: Sequence[float], alpha: float) -> float:
    """Mean of the worst ceil((1 - alpha) n) costs."""
    costs = np.asarray(costs, dtype=float)
    return float(np.mean(costs[tail_indices(costs, alpha)]))


def var(costs: Sequence[float], alpha: float) -> float:
    """Smallest sample c with at least alpha * n samples <= c."""
    costs = np.sort(np.asarray(costs, dtype=float))
    if costs.size == 0:
        raise ValueError("costs must be nonempty")
    _check_alpha(alpha)
    need = math.ceil(round(alpha * costs.size, 9))
    return float(costs[max(need, 1) - 1])
