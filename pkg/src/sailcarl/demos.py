"""Positive and negative demonstration corpora: generation, validation and JSONL I/O."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .cmdp import MAX_EPISODE_STEPS, Step, Trajectory
from .gridworld import (
    ACTIONS,
    GOAL,
    GRID_SIZE,
    N_ACTIONS,
    START,
    THETA1,
    THETA2,
    DomainTag,
    GridState,
    enters_danger,
    is_danger,
    reward,
    step,
)

DETOUR_EPSILON = 0.2
MAX_POST_VIOLATION_STEPS = 5
_MAX_ATTEMPTS = 10_000


class DemoFormatError(ValueError):
    pass


@dataclass
class DemoSet:
    positives: list[Trajectory] = field(default_factory=list)
    negatives: list[Trajectory] = field(default_factory=list)
    domain: DomainTag | None = None

    def __len__(self) -> int:
        return len(self.positives) + len(self.negatives)

    def validate(self) -> None:
        for i, t in enumerate(self.positives):
            problem = positive_problem(t, self.domain or t.domain)
            if problem:
                raise ValueError(f"positive {i}: {problem}")
        for i, t in enumerate(self.negatives):
            problem = negative_problem(t, self.domain or t.domain)
            if problem:
                raise ValueError(f"negative {i}: {problem}")


def positive_problem(t: Trajectory, d: DomainTag) -> str | None:
    """Why t is not a valid positive demo under d, or None."""
    if not t.steps or t.steps[-1].next_state != GOAL:
        return "does not reach the goal"
    if len(t) > MAX_EPISODE_STEPS:
        return f"longer than {MAX_EPISODE_STEPS} steps"
    if any(enters_danger(st.state, st.action, d) for st in t.steps):
        return "enters a danger cell"
    return None


def negative_problem(t: Trajectory, d: DomainTag) -> str | None:
    if not any(enters_danger(st.state, st.action, d) for st in t.steps):
        return "never enters a danger cell"
    return None


def _make_step(s: GridState, a: int, d: DomainTag) -> Step:
    nxt = step(s, a, d)
    return Step(s, a, nxt, reward(s, a, nxt), (1.0 if enters_danger(s, a, d) else 0.0,))


def safe_distances(d: DomainTag) -> dict[GridState, int]:
    """Safe shortest-path distance to the goal for every cell that can reach it."""
    dist = {GOAL: 0}
    frontier = [GOAL]
    cells = [GridState(x, y) for x in range(GRID_SIZE) for y in range(GRID_SIZE)]
    while frontier:
        nxt_frontier = []
        for s in cells:
            if s in dist or is_danger(s, d):
                continue
            if any(step(s, a, d) in frontier for a in range(N_ACTIONS)):
                dist[s] = dist[frontier[0]] + 1
                nxt_frontier.append(s)
        frontier = nxt_frontier
    return dist


def generate_positive(d: DomainTag, n: int, rng_seed: int, epsilon: float = DETOUR_EPSILON) -> list[Trajectory]:
    """Safe goal-reaching trajectories: BFS-shortest paths with random safe detours.

    The planner picks uniformly among the actions on some shortest safe path,
    so the corpus spreads over every shortest route. With probability
    ``epsilon`` a uniformly chosen action that does not enter danger is taken
    instead; the planner then continues from wherever the agent ends up.
    """
    if n <= 0:
        raise ValueError("positive count required: n must be > 0")
    dist = safe_distances(d)
    if START not in dist:
        raise ValueError(f"no safe path from {START} to {GOAL} under {d.label}")
    rng = np.random.default_rng(rng_seed)
    best: dict[GridState, list[int]] = {
        s: [a for a in range(N_ACTIONS) if dist.get(step(s, a, d), -1) == k - 1] for s, k in dist.items() if k > 0
    }

    out = []
    for _ in range(n):
        for _attempt in range(_MAX_ATTEMPTS):
            s, steps = START, []
            while len(steps) < MAX_EPISODE_STEPS and s != GOAL:
                if rng.random() < epsilon:
                    options = [a for a in range(N_ACTIONS) if not enters_danger(s, a, d)]
                else:
                    options = best[s]
                a = int(options[rng.integers(len(options))])
                st = _make_step(s, a, d)
                steps.append(st)
                s = st.next_state
            if s == GOAL:
                out.append(Trajectory(tuple(steps), d, terminated_at_goal=True))
                break
        else:
            raise RuntimeError("could not generate a positive demonstration")
    return out


def generate_negative(d: DomainTag, n: int, rng_seed: int) -> list[Trajectory]:
    """Uniform random walks kept only if they enter danger before the goal.

    Each walk is cut after its first violation plus a random 0..5 extra steps.
    """
    if n <= 0:
        raise ValueError("negative count required: n must be > 0")
    if not d.danger_cells:
        raise ValueError(f"domain {d.label} has no danger cells")
    rng = np.random.default_rng(rng_seed)
    out = []
    for _ in range(n):
        for _attempt in range(_MAX_ATTEMPTS):
            s, steps, extra = START, [], None
            while len(steps) < MAX_EPISODE_STEPS and s != GOAL:
                a = int(rng.integers(N_ACTIONS))
                st = _make_step(s, a, d)
                steps.append(st)
                s = st.next_state
                if extra is None and st.costs[0]:
                    extra = int(rng.integers(MAX_POST_VIOLATION_STEPS + 1))
                elif extra is not None:
                    extra -= 1
                if extra == 0:
                    break
            if extra is not None:
                out.append(Trajectory(tuple(steps), d, terminated_at_goal=s == GOAL))
                break
        else:
            raise RuntimeError("could not generate a negative demonstration")
    return out


def generate_demoset(d: DomainTag, n_pos: int, n_neg: int, rng_seed: int) -> DemoSet:
    seeds = np.random.SeedSequence(rng_seed).spawn(2)
    return DemoSet(
        generate_positive(d, n_pos, int(seeds[0].generate_state(1)[0])),
        generate_negative(d, n_neg, int(seeds[1].generate_state(1)[0])),
        d,
    )


def _step_record(st: Step) -> list:
    costs = [int(c) if float(c).is_integer() else c for c in st.costs]
    return [st.state.x, st.state.y, ACTIONS[st.action], st.next_state.x, st.next_state.y, st.reward, costs]


def trajectory_record(t: Trajectory, kind: str) -> str:
    rec = {"domain": t.domain.label, "kind": kind, "steps": [_step_record(st) for st in t.steps]}
    return json.dumps(rec, separators=(",", ":"))


def save_demos(demo_set: DemoSet, path) -> None:
    lines = [trajectory_record(t, "pos") for t in demo_set.positives]
    lines += [trajectory_record(t, "neg") for t in demo_set.negatives]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


DEFAULT_DOMAINS: dict[str, DomainTag] = {THETA1.label: THETA1, THETA2.label: THETA2}


def load_demos(path, domains: Mapping[str, DomainTag] | None = None) -> DemoSet:
    """Read a demo file, checking schema and label invariants line by line."""
    domains = DEFAULT_DOMAINS if domains is None else domains
    out = DemoSet()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                traj, kind = _parse_record(json.loads(line), domains)
            except (ValueError, KeyError, TypeError, IndexError) as exc:
                raise DemoFormatError(f"line {lineno}: {exc}") from None
            if out.domain is None:
                out.domain = traj.domain
            elif traj.domain != out.domain:
                raise DemoFormatError(f"line {lineno}: mixed domains {out.domain.label!r} and {traj.domain.label!r}")
            check = positive_problem if kind == "pos" else negative_problem
            problem = check(traj, traj.domain)
            if problem:
                raise DemoFormatError(f"line {lineno}: invariant breach: {kind} trajectory {problem}")
            (out.positives if kind == "pos" else out.negatives).append(traj)
    return out


def _parse_record(rec: dict, domains: Mapping[str, DomainTag]) -> tuple[Trajectory, str]:
    if not isinstance(rec, dict) or set(rec) != {"domain", "kind", "steps"}:
        raise ValueError("record must have exactly the fields domain, kind, steps")
    if rec["kind"] not in ("pos", "neg"):
        raise ValueError(f"kind must be 'pos' or 'neg', got {rec['kind']!r}")
    if rec["domain"] not in domains:
        raise ValueError(f"unknown domain {rec['domain']!r}")
    d = domains[rec["domain"]]
    steps = []
    for raw in rec["steps"]:
        if len(raw) != 7:
            raise ValueError(f"step record must have 7 fields, got {len(raw)}")
        x, y, act, nx, ny, r, costs = raw
        steps.append(
            Step(GridState(int(x), int(y)), ACTIONS.index(act), GridState(int(nx), int(ny)), float(r), tuple(float(c) for c in costs))
        )
    traj = Trajectory(tuple(steps), d, terminated_at_goal=bool(steps) and steps[-1].next_state == GOAL)
    traj.check()
    return traj, rec["kind"]
