"""5x5 Safe Navigation gridworld with textual states and a scheduled domain shift.

Coordinates follow north=+y, south=-y, east=+x, west=-x. Moves off the grid
leave the agent in place. Danger cells are counted, never terminal.
"""

from __future__ import annotations

import re
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

GRID_SIZE = 5
ACTIONS: tuple[str, ...] = ("north", "south", "east", "west")
N_ACTIONS = len(ACTIONS)
N_STATES = GRID_SIZE * GRID_SIZE

_DELTAS = {
    "north": (0, 1),
    "south": (0, -1),
    "east": (1, 0),
    "west": (-1, 0),
}

_ROOM_RE = re.compile(r"^You are in room \((-?\d+), (-?\d+)\)$")


class ParseError(ValueError):
    """Raised when a textual state does not match the room template."""


@dataclass(frozen=True, order=True)
class GridState:
    x: int
    y: int

    def __post_init__(self):
        if not (0 <= self.x < GRID_SIZE and 0 <= self.y < GRID_SIZE):
            raise ValueError(f"cell ({self.x}, {self.y}) outside the {GRID_SIZE}x{GRID_SIZE} grid")

    @property
    def index(self) -> int:
        return self.x * GRID_SIZE + self.y

    @classmethod
    def from_index(cls, i: int) -> "GridState":
        return cls(i // GRID_SIZE, i % GRID_SIZE)

    def __str__(self) -> str:
        return render(self)


START = GridState(0, 0)
GOAL = GridState(GRID_SIZE - 1, GRID_SIZE - 1)


@dataclass(frozen=True)
class DomainTag:
    """An environment variant: a label plus its active danger cells."""

    label: str
    danger_cells: frozenset[GridState] = field(default_factory=frozenset)

    def __post_init__(self):
        cells = frozenset(c if isinstance(c, GridState) else GridState(*c) for c in self.danger_cells)
        if START in cells or GOAL in cells:
            raise ValueError("start and goal cells cannot be danger cells")
        object.__setattr__(self, "danger_cells", cells)

    def sorted_cells(self) -> list[GridState]:
        return sorted(self.danger_cells)


THETA1 = DomainTag("theta1", frozenset({GridState(2, 2)}))
THETA2 = DomainTag("theta2", frozenset({GridState(2, 2), GridState(3, 3)}))


def make_domains(pre_cells: Iterable, post_cells: Iterable) -> tuple[DomainTag, DomainTag]:
    """Build the pre/post-shift domains from coordinate pairs."""
    return DomainTag("theta1", frozenset(pre_cells)), DomainTag("theta2", frozenset(post_cells))


@dataclass(frozen=True)
class ShiftSchedule:
    pre: DomainTag = THETA1
    post: DomainTag = THETA2
    shift_epoch: int = 100

    def __post_init__(self):
        if self.shift_epoch <= 0:
            raise ValueError("shift_epoch must be positive")


def active_domain(sched: ShiftSchedule, epoch: int) -> DomainTag:
    if epoch < 0:
        raise ValueError("epoch must be nonnegative")
    return sched.pre if epoch < sched.shift_epoch else sched.post


def action_index(a) -> int:
    if isinstance(a, str):
        try:
            return ACTIONS.index(a)
        except ValueError:
            raise ValueError(f"unknown action {a!r}") from None
    a = int(a)
    if not 0 <= a < N_ACTIONS:
        raise ValueError(f"action index {a} out of range")
    return a


def step(s: GridState, a, d: DomainTag | None = None) -> GridState:
    """Deterministic clamped move. The domain does not affect movement."""
    dx, dy = _DELTAS[ACTIONS[action_index(a)]]
    nx, ny = s.x + dx, s.y + dy
    if not (0 <= nx < GRID_SIZE and 0 <= ny < GRID_SIZE):
        return s
    return GridState(nx, ny)


def render(s: GridState) -> str:
    return f"You are in room ({s.x}, {s.y})"


def parse(text: str) -> GridState:
    m = _ROOM_RE.match(text)
    if m is None:
        raise ParseError(f"template mismatch: {text!r} is not 'You are in room (x, y)'")
    x, y = int(m.group(1)), int(m.group(2))
    for name, v in (("x", x), ("y", y)):
        if not 0 <= v < GRID_SIZE:
            raise ParseError(f"coordinate out of range: {name}={v}")
    return GridState(x, y)


def reward(s: GridState, a, s_next: GridState) -> float:
    return 1.0 if s_next == GOAL else 0.0


def is_danger(s: GridState, d: DomainTag) -> bool:
    return s in d.danger_cells


def enters_danger(s: GridState, a, d: DomainTag) -> bool:
    """True iff moving from s via a enters a danger cell from outside it."""
    nxt = step(s, a, d)
    return nxt != s and is_danger(nxt, d)


def is_terminal(s: GridState) -> bool:
    return s == GOAL


STATES: tuple[GridState, ...] = tuple(GridState.from_index(i) for i in range(N_STATES))


def all_states() -> list[GridState]:
    return list(STATES)


def transition_table() -> np.ndarray:
    """next-state index for every (state index, action index)."""
    table = np.empty((N_STATES, N_ACTIONS), dtype=np.int64)
    for s in all_states():
        for a in range(N_ACTIONS):
            table[s.index, a] = step(s, a).index
    return table


def danger_leading_pairs(d: DomainTag) -> list[tuple[GridState, int]]:
    """(state, action) pairs whose move enters a danger cell of d."""
    out = []
    for s in all_states():
        if s == GOAL:
            continue
        for a in range(N_ACTIONS):
            if enters_danger(s, a, d):
                out.append((s, a))
    return out


@dataclass(frozen=True)
class SafePath:
    length: int | None
    path: tuple[GridState, ...] = ()
    actions: tuple[int, ...] = ()

    @property
    def reachable(self) -> bool:
        return self.length is not None


def bfs_safe_oracle(d: DomainTag, start: GridState = START, goal: GridState = GOAL) -> SafePath:
    """Shortest path from start to goal that never enters a danger cell."""
    if start == goal:
        return SafePath(0, (start,), ())
    parent: dict[GridState, tuple[GridState, int]] = {}
    seen = {start}
    queue = deque([start])
    while queue:
        s = queue.popleft()
        for a in range(N_ACTIONS):
            nxt = step(s, a, d)
            if nxt in seen or is_danger(nxt, d):
                continue
            seen.add(nxt)
            parent[nxt] = (s, a)
            if nxt == goal:
                path, acts = [nxt], []
                while path[-1] != start:
                    prev, act = parent[path[-1]]
                    path.append(prev)
                    acts.append(act)
                path.reverse()
                acts.reverse()
                return SafePath(len(acts), tuple(path), tuple(acts))
            queue.append(nxt)
    return SafePath(None)
