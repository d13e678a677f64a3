"""Constraint learning from positive and negative demonstrations.

Two modes live here:

* BCE mode trains a tabular sigmoid constraint C(s, a) on demonstration
  labels (0 for pairs in positive demos, 1 for pairs in negative demos).
* Full mode evaluates and differentiates the joint reward/constraint
  objective: the max-entropy log-likelihood of positive demos under the
  reward, minus the log-likelihood of negative demos under the
  constraint-penalized reward, minus a squared penalty on each expected
  discounted constraint cost's distance to its threshold.

Trajectory likelihoods are finite-horizon and normalized over every
trajectory of ``horizon`` steps from the demo's start state (stopping early
at terminal states); a demo shorter than the horizon is scored by the
marginal probability of its prefix. Transitions are deterministic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .cmdp import MAX_EPISODE_STEPS, Trajectory
from .gridworld import ACTIONS, GOAL, N_ACTIONS, N_STATES, START, GridState, action_index, transition_table
from .optim import AdamState, adam_step


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


@dataclass
class ConstraintTable:
    """Per-(state, action) logits for each constraint; sigmoid gives C(s, a)."""

    logits: np.ndarray

    def __post_init__(self):
        self.logits = np.array(self.logits, dtype=float)
        if self.logits.ndim != 3:
            raise ValueError("logits must have shape (constraints, states, actions)")

    @classmethod
    def zeros(cls, n_constraints: int = 1, n_states: int = N_STATES, n_actions: int = N_ACTIONS):
        return cls(np.zeros((n_constraints, n_states, n_actions)))

    @property
    def n_constraints(self) -> int:
        return self.logits.shape[0]

    def probs(self) -> np.ndarray:
        return sigmoid(self.logits)

    def copy(self) -> "ConstraintTable":
        return ConstraintTable(self.logits.copy())


@dataclass
class RewardWeights:
    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.array(self.weights, dtype=float)
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("reward weights must be finite")

    @classmethod
    def zeros(cls, n_states: int = N_STATES, n_actions: int = N_ACTIONS):
        return cls(np.zeros((n_states, n_actions)))


@dataclass(frozen=True)
class ClirlHyper:
    lam: float = 1.0
    alphas: tuple[float, ...] = (1.0,)
    thresholds: tuple[float, ...] = (0.1,)
    gamma: float = 0.99
    horizon: int = MAX_EPISODE_STEPS

    def __post_init__(self):
        if self.lam < 0 or any(a < 0 for a in self.alphas) or any(h < 0 for h in self.thresholds):
            raise ValueError("lambda, alphas and thresholds must be nonnegative")
        if len(self.alphas) != len(self.thresholds):
            raise ValueError("one alpha and one threshold per constraint")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")


def _state_index(s) -> int:
    return s.index if isinstance(s, GridState) else int(s)


def constraint_prob(table: ConstraintTable, k: int, s, a) -> float:
    si, ai = _state_index(s), action_index(a) if isinstance(a, str) else int(a)
    K, S, A = table.logits.shape
    if not (0 <= k < K and 0 <= si < S and 0 <= ai < A):
        raise IndexError(f"(k={k}, s={si}, a={ai}) outside table of shape {table.logits.shape}")
    return float(sigmoid(table.logits[k, si, ai]))


# ---------------------------------------------------------------- BCE mode


def labeled_pairs(pos_batch: Sequence[Trajectory], neg_batch: Sequence[Trajectory], label_mode: str = "trajectory"):
    """(state indices, action indices, targets) for every step of both batches.

    ``trajectory`` labels every step of a negative demo 1. ``transition``
    labels only its danger-entering steps 1 and the rest 0.
    """
    if label_mode not in ("trajectory", "transition"):
        raise ValueError(f"label_mode must be 'trajectory' or 'transition', got {label_mode!r}")
    s_idx, a_idx, y = [], [], []
    for t in pos_batch:
        for st in t.steps:
            s_idx.append(st.state.index)
            a_idx.append(st.action)
            y.append(0.0)
    for t in neg_batch:
        for st in t.steps:
            s_idx.append(st.state.index)
            a_idx.append(st.action)
            y.append(1.0 if label_mode == "trajectory" else float(st.costs[0] > 0))
    return np.array(s_idx, dtype=np.int64), np.array(a_idx, dtype=np.int64), np.array(y)


def label_counts(pos_batch: Sequence[Trajectory], neg_batch: Sequence[Trajectory], label_mode: str = "trajectory", shape=(N_STATES, N_ACTIONS)):
    """Per-(state, action) counts of target-0 and target-1 labels."""
    s_idx, a_idx, y = labeled_pairs(pos_batch, neg_batch, label_mode)
    zeros = np.zeros(shape)
    ones = np.zeros(shape)
    np.add.at(zeros, (s_idx, a_idx), 1.0 - y)
    np.add.at(ones, (s_idx, a_idx), y)
    return zeros, ones


def bce_from_counts(logits: np.ndarray, zeros: np.ndarray, ones: np.ndarray, k: int = 0):
    """Mean BCE over all labeled occurrences and its gradient w.r.t. the logits."""
    n = zeros.sum() + ones.sum()
    if n == 0:
        raise ValueError("empty combined batch")
    z = logits[k]
    # softplus(z) = -log(1 - sigmoid(z)), softplus(-z) = -log sigmoid(z)
    loss = float((zeros * np.logaddexp(0.0, z) + ones * np.logaddexp(0.0, -z)).sum() / n)
    grad = np.zeros_like(logits)
    grad[k] = ((zeros + ones) * sigmoid(z) - ones) / n
    return loss, grad


def bce_step(table: ConstraintTable, zeros: np.ndarray, ones: np.ndarray, adam: AdamState, k: int = 0):
    _, grad = bce_from_counts(table.logits, zeros, ones, k)
    adam, new = adam_step(adam, {"logits": table.logits}, {"logits": grad})
    new_table = ConstraintTable(new["logits"])
    loss, _ = bce_from_counts(new_table.logits, zeros, ones, k)
    return new_table, loss, adam


def bce_update(
    table: ConstraintTable,
    pos_batch: Sequence[Trajectory],
    neg_batch: Sequence[Trajectory],
    lr: float = 0.001,
    adam: AdamState | None = None,
    label_mode: str = "trajectory",
    k: int = 0,
):
    """One Adam step on the BCE loss. Returns (table, post-step loss, adam state)."""
    if lr <= 0:
        raise ValueError("lr must be positive")
    zeros, ones = label_counts(pos_batch, neg_batch, label_mode, table.logits.shape[1:])
    adam = adam if adam is not None else AdamState(lr=lr)
    return bce_step(table, zeros, ones, adam, k)


# ---------------------------------------------------------------- full mode


@dataclass(frozen=True)
class TabularMdp:
    """Deterministic finite MDP view: next-state table, start state, terminal mask."""

    next_state: np.ndarray
    start: int = 0
    terminal: np.ndarray | None = None

    def __post_init__(self):
        ns = np.asarray(self.next_state, dtype=np.int64)
        if ns.ndim != 2 or ns.min() < 0 or ns.max() >= ns.shape[0]:
            raise ValueError("next_state must be an (S, A) table of state indices")
        object.__setattr__(self, "next_state", ns)
        term = np.zeros(ns.shape[0], dtype=bool) if self.terminal is None else np.asarray(self.terminal, dtype=bool)
        object.__setattr__(self, "terminal", term)

    @property
    def n_states(self) -> int:
        return self.next_state.shape[0]

    @property
    def n_actions(self) -> int:
        return self.next_state.shape[1]


def gridworld_mdp() -> TabularMdp:
    term = np.zeros(N_STATES, dtype=bool)
    term[GOAL.index] = True
    return TabularMdp(transition_table(), START.index, term)


@dataclass
class SoftSolution:
    """Finite-horizon soft backups and the induced time-indexed policy."""

    V: np.ndarray  # (H + 1, S), V[H] = 0
    pi: np.ndarray  # (H, S, A), zero rows at terminal states
    gamma: float


def soft_backup(mdp: TabularMdp, reward: np.ndarray, gamma: float, horizon: int) -> SoftSolution:
    """Log-partition recursion V_t(s) = logsumexp_a(gamma^t r(s, a) + V_{t+1}(s')).

    The discount is applied to the reward at its absolute time step, so
    exp(V_0(s)) equals the sum over all trajectories from s of
    exp(sum_t gamma^t r_t) exactly.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    S, A = mdp.next_state.shape
    V = np.zeros((horizon + 1, S))
    pi = np.zeros((horizon, S, A))
    live = ~mdp.terminal
    for t in range(horizon - 1, -1, -1):
        Q = gamma**t * reward + V[t + 1][mdp.next_state]
        qmax = Q.max(axis=1, keepdims=True)
        lse = qmax[:, 0] + np.log(np.exp(Q - qmax).sum(axis=1))
        V[t] = np.where(live, lse, 0.0)
        pi[t] = np.where(live[:, None], np.exp(Q - lse[:, None]), 0.0)
    return SoftSolution(V, pi, gamma)


def soft_log_partition(mdp: TabularMdp, effective_reward: np.ndarray, gamma: float, horizon: int) -> np.ndarray:
    """Per-state log-partition over all horizon-step trajectories."""
    return soft_backup(mdp, np.asarray(effective_reward, dtype=float), gamma, horizon).V[0]


def _occupancy(mdp: TabularMdp, sol: SoftSolution, start: int):
    """State marginals mu (H + 1, S) and state-action visitation d (H, S, A)."""
    H, S, A = sol.pi.shape
    mu = np.zeros((H + 1, S))
    d = np.zeros((H, S, A))
    mu[0, start] = 1.0
    for t in range(H):
        d[t] = mu[t][:, None] * sol.pi[t]
        np.add.at(mu[t + 1], mdp.next_state.ravel(), d[t].ravel())
    return mu, d


def _reward_adjoint(mdp: TabularMdp, sol: SoftSolution, gV_seed: np.ndarray, gpi: np.ndarray | None = None) -> np.ndarray:
    """Pull adjoints on V (and optionally on pi) back onto the reward table."""
    H = sol.pi.shape[0]
    gV = gV_seed.copy()
    gr = np.zeros(mdp.next_state.shape)
    flat_ns = mdp.next_state.ravel()
    for t in range(H):
        pi_t = sol.pi[t]
        gQ = pi_t * gV[t][:, None]
        if gpi is not None:
            gQ += pi_t * (gpi[t] - (pi_t * gpi[t]).sum(axis=1, keepdims=True))
        gr += sol.gamma**t * gQ
        np.add.at(gV[t + 1], flat_ns, gQ.ravel())
    return gr


def _visitation_adjoint(mdp: TabularMdp, sol: SoftSolution, mu: np.ndarray, W: np.ndarray) -> np.ndarray:
    """Adjoint on pi of sum_t <d_t, W_t>."""
    H = sol.pi.shape[0]
    gmu_next = np.zeros(mdp.n_states)
    gpi = np.zeros_like(sol.pi)
    for t in range(H - 1, -1, -1):
        gd = W[t] + gmu_next[mdp.next_state]
        gpi[t] = mu[t][:, None] * gd
        gmu_next = (sol.pi[t] * gd).sum(axis=1)
    return gpi


@dataclass
class IndexDemos:
    """Demonstrations as sequences of (state index, action index) pairs."""

    positives: list[list[tuple[int, int]]] = field(default_factory=list)
    negatives: list[list[tuple[int, int]]] = field(default_factory=list)

    @classmethod
    def from_demoset(cls, demos) -> "IndexDemos":
        def conv(t: Trajectory):
            return [(st.state.index, st.action) for st in t.steps]

        return cls([conv(t) for t in demos.positives], [conv(t) for t in demos.negatives])


def _as_index_demos(demos) -> IndexDemos:
    return demos if isinstance(demos, IndexDemos) else IndexDemos.from_demoset(demos)


def _check_paths(mdp: TabularMdp, paths, horizon: int, kind: str) -> None:
    for i, path in enumerate(paths):
        if len(path) > horizon:
            raise ValueError(f"horizon {horizon} too short for {kind} demo {i} of length {len(path)}")
        for t, (s, a) in enumerate(path):
            if mdp.terminal[s]:
                raise ValueError(f"{kind} demo {i} continues past a terminal state at step {t}")
            if t + 1 < len(path) and mdp.next_state[s, a] != path[t + 1][0]:
                raise ValueError(f"{kind} demo {i} step {t} does not follow the MDP transitions")


def _path_loglik(mdp: TabularMdp, sol: SoftSolution, reward: np.ndarray, path) -> float:
    if not path:
        return 0.0
    disc = sol.gamma ** np.arange(len(path))
    ss = np.array([s for s, _ in path])
    aa = np.array([a for _, a in path])
    last = mdp.next_state[ss[-1], aa[-1]]
    return float(disc @ reward[ss, aa] + sol.V[len(path), last] - sol.V[0, ss[0]])


def _loglik_grad(mdp: TabularMdp, sol: SoftSolution, paths) -> np.ndarray:
    """Gradient of sum of path log-likelihoods w.r.t. the reward table."""
    H = sol.pi.shape[0]
    counts = np.zeros(mdp.next_state.shape)
    gV = np.zeros((H + 1, mdp.n_states))
    for path in paths:
        if not path:
            continue
        for t, (s, a) in enumerate(path):
            counts[s, a] += sol.gamma**t
        s_last, a_last = path[-1]
        gV[len(path), mdp.next_state[s_last, a_last]] += 1.0
        gV[0, path[0][0]] -= 1.0
    return counts + _reward_adjoint(mdp, sol, gV)


@dataclass
class _Forward:
    sol_pos: SoftSolution
    sol_neg: SoftSolution
    c: np.ndarray
    r_neg: np.ndarray
    mu: np.ndarray
    d: np.ndarray
    expected_costs: np.ndarray
    value: float


def _forward(rw: RewardWeights, ct: ConstraintTable, demos: IndexDemos, hyper: ClirlHyper, mdp: TabularMdp) -> _Forward:
    K = ct.n_constraints
    if len(hyper.alphas) != K:
        raise ValueError(f"hyper has {len(hyper.alphas)} alphas for {K} constraints")
    if not demos.positives and not demos.negatives:
        raise ValueError("demos must be nonempty")
    _check_paths(mdp, demos.positives, hyper.horizon, "positive")
    _check_paths(mdp, demos.negatives, hyper.horizon, "negative")
    r_pos = rw.weights
    c = sigmoid(ct.logits)
    r_neg = r_pos - np.tensordot(np.asarray(hyper.alphas), c, axes=1)
    sol_pos = soft_backup(mdp, r_pos, hyper.gamma, hyper.horizon)
    sol_neg = soft_backup(mdp, r_neg, hyper.gamma, hyper.horizon)
    mu, d = _occupancy(mdp, sol_neg, mdp.start)
    disc = hyper.gamma ** np.arange(hyper.horizon)
    expected = np.einsum("t,tsa,ksa->k", disc, d, c)
    value = sum(_path_loglik(mdp, sol_pos, r_pos, p) for p in demos.positives)
    value -= sum(_path_loglik(mdp, sol_neg, r_neg, p) for p in demos.negatives)
    value -= hyper.lam * float(np.sum((expected - np.asarray(hyper.thresholds)) ** 2))
    return _Forward(sol_pos, sol_neg, c, r_neg, mu, d, expected, float(value))


def clirl_objective(rw: RewardWeights, ct: ConstraintTable, demos, hyper: ClirlHyper, mdp: TabularMdp | None = None) -> float:
    mdp = gridworld_mdp() if mdp is None else mdp
    return _forward(rw, ct, _as_index_demos(demos), hyper, mdp).value


def clirl_gradient(rw: RewardWeights, ct: ConstraintTable, demos, hyper: ClirlHyper, mdp: TabularMdp | None = None):
    """Analytic gradient of the objective: (d/d reward weights, d/d constraint logits)."""
    mdp = gridworld_mdp() if mdp is None else mdp
    demos = _as_index_demos(demos)
    fw = _forward(rw, ct, demos, hyper, mdp)
    H = hyper.horizon
    disc = hyper.gamma ** np.arange(H)
    resid = fw.expected_costs - np.asarray(hyper.thresholds)
    coef = -2.0 * hyper.lam * resid  # d value / d E_k

    g_rpos = _loglik_grad(mdp, fw.sol_pos, demos.positives)
    g_rneg = -_loglik_grad(mdp, fw.sol_neg, demos.negatives)
    # penalty through the visitation distribution of the soft-optimal policy
    W = disc[:, None, None] * np.tensordot(coef, fw.c, axes=1)[None]
    gpi = _visitation_adjoint(mdp, fw.sol_neg, fw.mu, W)
    g_rneg += _reward_adjoint(mdp, fw.sol_neg, np.zeros_like(fw.sol_neg.V), gpi)
    # penalty through C directly
    occ = np.einsum("t,tsa->sa", disc, fw.d)
    g_c = coef[:, None, None] * occ[None]
    g_c -= np.asarray(hyper.alphas)[:, None, None] * g_rneg[None]

    g_w = g_rpos + g_rneg
    g_logits = g_c * fw.c * (1.0 - fw.c)
    return g_w, g_logits


def clirl_ascent(
    rw: RewardWeights,
    ct: ConstraintTable,
    demos,
    hyper: ClirlHyper,
    mdp: TabularMdp | None = None,
    steps: int = 100,
    adam: AdamState | None = None,
):
    """Adam gradient ascent on the full objective. Returns (rw, ct, adam, values)."""
    mdp = gridworld_mdp() if mdp is None else mdp
    demos = _as_index_demos(demos)
    adam = adam if adam is not None else AdamState()
    values = []
    for _ in range(steps):
        g_w, g_l = clirl_gradient(rw, ct, demos, hyper, mdp)
        adam, new = adam_step(adam, {"w": rw.weights, "logits": ct.logits}, {"w": -g_w, "logits": -g_l})
        rw, ct = RewardWeights(new["w"]), ConstraintTable(new["logits"])
        values.append(clirl_objective(rw, ct, demos, hyper, mdp))
    return rw, ct, adam, values


# ---------------------------------------------------------------- model file


def save_model(path, ct: ConstraintTable | None = None, rw: RewardWeights | None = None) -> None:
    """Write [k, x, y, action, logit] and [x, y, action, weight] records, one per line."""
    lines = []
    if ct is not None:
        for k in range(ct.n_constraints):
            for i in range(ct.logits.shape[1]):
                s = GridState.from_index(i)
                for a, name in enumerate(ACTIONS):
                    lines.append(json.dumps([k, s.x, s.y, name, float(ct.logits[k, i, a])]))
    if rw is not None:
        for i in range(rw.weights.shape[0]):
            s = GridState.from_index(i)
            for a, name in enumerate(ACTIONS):
                lines.append(json.dumps([s.x, s.y, name, float(rw.weights[i, a])]))
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def load_model(path) -> tuple[ConstraintTable | None, RewardWeights | None]:
    logit_recs, weight_recs = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                if len(rec) == 5:
                    k, x, y, act, val = rec
                    logit_recs.append((int(k), GridState(int(x), int(y)).index, ACTIONS.index(act), float(val)))
                elif len(rec) == 4:
                    x, y, act, val = rec
                    weight_recs.append((GridState(int(x), int(y)).index, ACTIONS.index(act), float(val)))
                else:
                    raise ValueError(f"expected 4 or 5 fields, got {len(rec)}")
            except (ValueError, TypeError) as exc:
                raise ValueError(f"{path}: line {lineno}: {exc}") from None
    ct = rw = None
    if logit_recs:
        K = 1 + max(r[0] for r in logit_recs)
        ct = ConstraintTable.zeros(K)
        for k, s, a, val in logit_recs:
            ct.logits[k, s, a] = val
    if weight_recs:
        rw = RewardWeights.zeros()
        for s, a, val in weight_recs:
            rw.weights[s, a] = val
    return ct, rw
