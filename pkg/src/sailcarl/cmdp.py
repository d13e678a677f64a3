"""CMDP tuple, trajectories, discounted sums and the rule-to-cost registry."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable

from .gridworld import ACTIONS, DomainTag, GridState, action_index, step

MAX_EPISODE_STEPS = 50


class UnknownConstraintError(KeyError):
    pass


class RuleParseError(ValueError):
    pass


@dataclass(frozen=True)
class Cmdp:
    """States, the fixed action order, discount, cost thresholds and domain distribution."""

    states: tuple[GridState, ...]
    gamma: float = 0.99
    thresholds: tuple[float, ...] = (0.1,)
    domains: tuple[DomainTag, ...] = ()
    domain_weights: tuple[float, ...] = ()
    actions: tuple[str, ...] = ACTIONS

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if any(h < 0 for h in self.thresholds):
            raise ValueError("thresholds must be nonnegative")
        if tuple(self.actions) != ACTIONS:
            raise ValueError(f"action order is fixed to {ACTIONS}")
        if len(self.domains) != len(self.domain_weights):
            raise ValueError("one sampling weight per domain is required")
        if self.domains and not math.isclose(sum(self.domain_weights), 1.0, abs_tol=1e-9):
            raise ValueError("domain sampling weights must sum to 1")

    def sample_domain(self, rng) -> DomainTag:
        return self.domains[int(rng.choice(len(self.domains), p=list(self.domain_weights)))]


@dataclass(frozen=True)
class Step:
    state: GridState
    action: int
    next_state: GridState
    reward: float
    costs: tuple[float, ...]


@dataclass(frozen=True)
class Trajectory:
    steps: tuple[Step, ...]
    domain: DomainTag
    terminated_at_goal: bool = False

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))
        if len(self.steps) > MAX_EPISODE_STEPS:
            raise ValueError(f"trajectory has {len(self.steps)} steps, cap is {MAX_EPISODE_STEPS}")

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def n_constraints(self) -> int:
        return len(self.steps[0].costs) if self.steps else 0

    @property
    def rewards(self) -> list[float]:
        return [st.reward for st in self.steps]

    def violations(self, k: int = 0) -> int:
        return int(sum(st.costs[k] for st in self.steps))

    def check(self) -> None:
        """Raise ValueError if any step breaks the transition or cost invariants."""
        width = self.n_constraints
        for i, st in enumerate(self.steps):
            if step(st.state, st.action, self.domain) != st.next_state:
                raise ValueError(f"step {i}: next_state does not follow from ({st.state}, {ACTIONS[st.action]})")
            if len(st.costs) != width:
                raise ValueError(f"step {i}: expected {width} cost entries, got {len(st.costs)}")
            if any(c not in (0, 1) for c in st.costs):
                raise ValueError(f"step {i}: costs must be 0/1 indicators")
            if i + 1 < len(self.steps) and self.steps[i + 1].state != st.next_state:
                raise ValueError(f"step {i + 1}: state does not continue from previous next_state")


def discounted_return(traj: Trajectory, gamma: float) -> float:
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    total, disc = 0.0, 1.0
    for st in traj.steps:
        total += disc * st.reward
        disc *= gamma
    return total


def discounted_cost(traj: Trajectory, k: int, gamma: float) -> float:
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    if traj.steps and not 0 <= k < traj.n_constraints:
        raise UnknownConstraintError(f"constraint {k} is not registered (trajectory has {traj.n_constraints})")
    total, disc = 0.0, 1.0
    for st in traj.steps:
        total += disc * st.costs[k]
        disc *= gamma
    return total


_RULE_RE = re.compile(r"^\s*Do not enter room \(\s*(\d+)\s*,\s*(\d+)\s*\)\s*\.?\s*$", re.IGNORECASE)


def render_rule(cell: GridState) -> str:
    return f"Do not enter room ({cell.x}, {cell.y})"


@dataclass(frozen=True)
class CostHandle:
    """C(s, a) = 1 iff moving from s via a enters one of ``cells``."""

    k: int
    cells: frozenset[GridState]

    def __call__(self, s: GridState, a) -> float:
        nxt = step(s, action_index(a))
        return 1.0 if nxt != s and nxt in self.cells else 0.0


@dataclass
class RuleRegistry:
    """Maps rule text to constraint indices and forbidden-cell cost functions.

    Several rules may share one constraint index; the index's cost is then 1
    when any of its rules fires.
    """

    entries: dict[str, tuple[int, GridState]] = field(default_factory=dict)

    @property
    def n_constraints(self) -> int:
        return 1 + max((k for k, _ in self.entries.values()), default=-1)

    def register(self, rule_text: str, k: int | None = None) -> CostHandle:
        cell = _parse_rule(rule_text)
        key = render_rule(cell)
        if key in self.entries:
            prev_k, _ = self.entries[key]
            if k is not None and k != prev_k:
                raise ValueError(f"rule {key!r} already bound to constraint {prev_k}")
            return self.handle(prev_k)
        if k is None:
            k = self.n_constraints
        self.entries[key] = (k, cell)
        return self.handle(k)

    def handle(self, k: int) -> CostHandle:
        cells = frozenset(c for kk, c in self.entries.values() if kk == k)
        if not cells:
            raise UnknownConstraintError(f"constraint {k} is not registered")
        return CostHandle(k, cells)

    def costs(self, s: GridState, a) -> tuple[float, ...]:
        return tuple(self.handle(k)(s, a) for k in range(self.n_constraints))

    @classmethod
    def for_domain(cls, d: DomainTag) -> "RuleRegistry":
        """One constraint (index 0) forbidding every danger cell of d."""
        reg = cls()
        for cell in d.sorted_cells():
            reg.register(render_rule(cell), k=0)
        return reg


def _parse_rule(rule_text: str) -> GridState:
    m = _RULE_RE.match(rule_text)
    if m is None:
        raise RuleParseError(f"unmatched pattern: {rule_text!r} does not match 'Do not enter room (x, y)'")
    try:
        return GridState(int(m.group(1)), int(m.group(2)))
    except ValueError as exc:
        raise RuleParseError(str(exc)) from None


def resolve_rule(registry: RuleRegistry, rule_text: str) -> Callable[[GridState, object], float]:
    """Return the cost function for a rule, registering it on first sight."""
    cell = _parse_rule(rule_text)
    key = render_rule(cell)
    if key not in registry.entries:
        registry.register(key)
    k, _ = registry.entries[key]
    return CostHandle(k, frozenset({cell}))
