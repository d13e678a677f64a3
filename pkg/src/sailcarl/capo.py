"""Constraint-aware policy optimization for the tabular softmax policy.

REINFORCE with batch-normalized, constraint-penalized returns-to-go, an
optional PPO ratio clip, projected dual ascent on the Lagrange multipliers
and an optional CVaR tail penalty.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .clirl import ConstraintTable, RewardWeights, sigmoid
from .cmdp import MAX_EPISODE_STEPS, Step, Trajectory
from .gridworld import GOAL, N_ACTIONS, N_STATES, START, STATES, DomainTag, GridState, transition_table
from .optim import AdamState, adam_step
from .risk import RiskConfig, tail_indices

__all__ = [
    "AdamState",
    "Multipliers",
    "PolicyTable",
    "adam_step",
    "j_capo",
    "penalized_advantages",
    "policy_probs",
    "policy_update",
    "rollout",
    "update_multipliers",
]

_NEXT = transition_table()


@dataclass
class PolicyTable:
    q: np.ndarray = field(default_factory=lambda: np.zeros((N_STATES, N_ACTIONS)))

    def __post_init__(self):
        self.q = np.array(self.q, dtype=float)
        if not np.all(np.isfinite(self.q)):
            raise ValueError("policy preferences must be finite")

    def probs(self) -> np.ndarray:
        z = self.q - self.q.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class Multipliers:
    betas: tuple[float, ...] = (0.5,)
    eta: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        if any(b < 0 for b in self.betas):
            raise ValueError("multipliers must be nonnegative")


def policy_probs(pt: PolicyTable, s) -> np.ndarray:
    i = s.index if isinstance(s, GridState) else int(s)
    z = pt.q[i] - pt.q[i].max()
    e = np.exp(z)
    return e / e.sum()


def rollout(pt: PolicyTable, d: DomainTag, rng: np.random.Generator, max_steps: int = MAX_EPISODE_STEPS, start: GridState = START) -> Trajectory:
    """Sample one episode; costs are true 0/1 danger-entry indicators."""
    cum = np.cumsum(pt.probs(), axis=1).tolist()
    danger = {c.index for c in d.danger_cells}
    goal = GOAL.index
    s = start.index
    steps = []
    while len(steps) < max_steps and s != goal:
        u = rng.random()
        row = cum[s]
        a = 0
        while a < N_ACTIONS - 1 and u >= row[a]:
            a += 1
        nxt = int(_NEXT[s, a])
        cost = 1.0 if nxt != s and nxt in danger else 0.0
        steps.append(Step(STATES[s], a, STATES[nxt], 1.0 if nxt == goal else 0.0, (cost,)))
        s = nxt
    return Trajectory(tuple(steps), d, terminated_at_goal=s == goal)


def _pairs(traj: Trajectory) -> tuple[np.ndarray, np.ndarray]:
    return (
        np.fromiter((st.state.index for st in traj.steps), dtype=np.int64, count=len(traj)),
        np.fromiter((st.action for st in traj.steps), dtype=np.int64, count=len(traj)),
    )


def _reward_to_go(values: np.ndarray, gamma: float) -> np.ndarray:
    out = np.empty_like(values)
    acc = 0.0
    for t in range(len(values) - 1, -1, -1):
        acc = values[t] + gamma * acc
        out[t] = acc
    return out


def _step_penalty(traj: Trajectory, ct: ConstraintTable | None, betas: Sequence[float]) -> np.ndarray:
    if ct is None or not any(betas):
        return np.zeros(len(traj))
    s, a = _pairs(traj)
    c = sigmoid(ct.logits[:, s, a])  # (K, T)
    return np.asarray(betas, dtype=float) @ c


def trajectory_learned_cost(traj: Trajectory, ct: ConstraintTable, gamma: float) -> np.ndarray:
    """Per-constraint discounted sum of learned violation probabilities."""
    s, a = _pairs(traj)
    disc = gamma ** np.arange(len(traj))
    return sigmoid(ct.logits[:, s, a]) @ disc if len(traj) else np.zeros(ct.n_constraints)


def penalized_advantages(
    batch: Sequence[Trajectory],
    ct: ConstraintTable | None,
    gamma: float = 0.99,
    beta=0.5,
    risk: RiskConfig | None = None,
) -> list[np.ndarray]:
    """Normalized penalized returns-to-go, one array per trajectory.

    With ``risk.weight > 0`` the trajectories in the CVaR tail of summed
    discounted learned cost carry an extra per-step penalty scaled so the
    batch objective gains -weight * CVaR.
    """
    if not batch:
        raise ValueError("batch must be nonempty")
    betas = tuple(np.atleast_1d(np.asarray(beta, dtype=float)))
    penalties = [_step_penalty(t, ct, betas) for t in batch]
    if risk is not None and risk.weight > 0 and ct is not None:
        totals = [float(trajectory_learned_cost(t, ct, gamma).sum()) for t in batch]
        tail = tail_indices(totals, risk.alpha)
        scale = risk.weight * len(batch) / len(tail)
        for i in tail:
            s, a = _pairs(batch[i])
            penalties[i] = penalties[i] + scale * sigmoid(ct.logits[:, s, a]).sum(axis=0)
    returns = [
        _reward_to_go(np.asarray(t.rewards, dtype=float) - pen, gamma) for t, pen in zip(batch, penalties)
    ]
    flat = np.concatenate(returns) if returns else np.zeros(0)
    if flat.size == 0:
        return returns
    mean, std = flat.mean(), flat.std()
    return [(g - mean) / (std + 1e-8) for g in returns]


def grad_log_pi(pt: PolicyTable, s: int, a: int) -> np.ndarray:
    """Gradient of log pi(a|s) w.r.t. the row q[s]."""
    g = -policy_probs(pt, s)
    g[a] += 1.0
    return g


def policy_update(
    pt: PolicyTable,
    batch: Sequence[Trajectory],
    advantages: Sequence[np.ndarray],
    adam: AdamState,
    clip: float | None = None,
    old_probs: np.ndarray | None = None,
):
    """One Adam ascent step on sum_steps A * log pi(a|s). Returns (table, adam).

    With ``clip`` set, the PPO clipped surrogate sum min(rho A, clip(rho) A)
    is used instead, rho = pi / pi_old with ``old_probs`` the behaviour
    policy's probability table (defaults to the current one).
    """
    if len(batch) != len(advantages):
        raise ValueError(f"{len(advantages)} advantage arrays for {len(batch)} trajectories")
    probs = pt.probs()
    old = probs if old_probs is None else old_probs
    grad = np.zeros_like(pt.q)
    for traj, adv in zip(batch, advantages):
        adv = np.asarray(adv, dtype=float)
        if adv.shape != (len(traj),):
            raise ValueError(f"advantages of length {adv.size} for a trajectory of {len(traj)} steps")
        if not len(traj):
            continue
        s, a = _pairs(traj)
        ratio = probs[s, a] / old[s, a]
        weight = adv * ratio
        if clip is not None:
            active = ((adv > 0) & (ratio > 1 + clip)) | ((adv < 0) & (ratio < 1 - clip))
            weight = np.where(active, 0.0, weight)
        # d log pi(a|s) / d q[s, .] = onehot(a) - pi(s, .)
        np.add.at(grad, s, -weight[:, None] * probs[s])
        np.add.at(grad, (s, a), weight)
    adam, new = adam_step(adam, {"q": pt.q}, {"q": -grad})
    return PolicyTable(new["q"]), adam


def update_multipliers(m: Multipliers, cost_estimates: Sequence[float], thresholds: Sequence[float]) -> Multipliers:
    """Projected dual ascent: beta_k <- max(0, beta_k + eta (C_k - H_k))."""
    if not (len(m.betas) == len(cost_estimates) == len(thresholds)):
        raise ValueError("multipliers, cost estimates and thresholds must align")
    betas = tuple(max(0.0, b + m.eta * (c - h)) for b, c, h in zip(m.betas, cost_estimates, thresholds))
    return Multipliers(betas, m.eta)


def j_capo(
    batch: Sequence[Trajectory],
    rw: RewardWeights | None,
    ct: ConstraintTable | None,
    m: Multipliers,
    gamma: float = 0.99,
) -> float:
    """Batch estimate of E[sum gamma^t R] - sum_k beta_k E[sum gamma^t C_k].

    ``rw=None`` uses the rewards recorded in the trajectories.
    """
    if not batch:
        raise ValueError("batch must be nonempty")
    ret = cost = 0.0
    for traj in batch:
        disc = gamma ** np.arange(len(traj))
        if rw is None:
            ret += float(disc @ np.asarray(traj.rewards, dtype=float))
        else:
            s, a = _pairs(traj)
            ret += float(disc @ rw.weights[s, a])
        if ct is not None:
            cost += float(np.asarray(m.betas) @ trajectory_learned_cost(traj, ct, gamma))
    return (ret - cost) / len(batch)
