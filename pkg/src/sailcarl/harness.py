"""Safe Navigation experiment: baselines, training loop, metrics and outputs."""

from __future__ import annotations

import csv
import io
import json
import logging
import statistics
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .capo import Multipliers, PolicyTable, penalized_advantages, policy_update, rollout, trajectory_learned_cost, update_multipliers
from .clirl import ConstraintTable, bce_step, label_counts, save_model, sigmoid
from .cmdp import MAX_EPISODE_STEPS
from .demos import generate_demoset
from .gridworld import (
    ACTIONS,
    GRID_SIZE,
    N_ACTIONS,
    N_STATES,
    DomainTag,
    GridState,
    ShiftSchedule,
    active_domain,
    bfs_safe_oracle,
    danger_leading_pairs,
    make_domains,
)
from .optim import AdamState
from .risk import RiskConfig

__all__ = [
    "ExperimentConfig",
    "MetricsRecord",
    "bfs_safe_oracle",
    "emit_heatmap",
    "evaluate",
    "hand_coded_table",
    "load_config",
    "run_experiment",
    "run_trial",
]

log = logging.getLogger(__name__)

METHODS = ("sail-carl", "no-constraint", "hand-coded")
HAND_CODED_DANGER = 0.99
HAND_CODED_SAFE = 0.01


@dataclass(frozen=True)
class ExperimentConfig:
    method: str = "all"
    trials: int = 10
    epochs: int = 200
    shift_epoch: int = 100
    episodes_per_epoch: int = 16
    eval_episodes: int = 100
    max_steps: int = MAX_EPISODE_STEPS
    gamma: float = 0.99
    beta: float = 0.5
    lr: float = 0.001
    policy_iters: int = 10
    clip: float | None = None
    label_mode: str = "trajectory"
    penalty: str = "fixed"
    eta: float = 0.01
    thresholds: tuple[float, ...] = (0.1,)
    cvar_alpha: float = 0.9
    cvar_weight: float = 0.0
    n_pos: int = 500
    n_neg: int = 500
    demo_batch: int = 32
    clirl_steps: int = 50
    constraint_lr: float = 0.001
    pre_danger: tuple[tuple[int, int], ...] = ((2, 2),)
    post_danger: tuple[tuple[int, int], ...] = ((2, 2), (3, 3))
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS + ("all",):
            raise ValueError(f"method must be one of {METHODS + ('all',)}, got {self.method!r}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not 0 < self.shift_epoch < self.epochs:
            raise ValueError("need 0 < shift_epoch < epochs")
        if self.max_steps < 1 or self.max_steps > MAX_EPISODE_STEPS:
            raise ValueError(f"max_steps must lie in [1, {MAX_EPISODE_STEPS}]")
        if self.label_mode not in ("trajectory", "transition"):
            raise ValueError("label_mode must be 'trajectory' or 'transition'")
        if self.penalty not in ("fixed", "lagrangian"):
            raise ValueError("penalty must be 'fixed' or 'lagrangian'")
        if self.episodes_per_epoch < 1 or self.eval_episodes < 1 or self.policy_iters < 1:
            raise ValueError("episode counts and policy_iters must be >= 1")
        object.__setattr__(self, "thresholds", tuple(float(h) for h in self.thresholds))
        object.__setattr__(self, "pre_danger", tuple(tuple(int(v) for v in c) for c in self.pre_danger))
        object.__setattr__(self, "post_danger", tuple(tuple(int(v) for v in c) for c in self.post_danger))
        RiskConfig(self.cvar_alpha, self.cvar_weight)

    @property
    def methods(self) -> tuple[str, ...]:
        return METHODS if self.method == "all" else (self.method,)

    def schedule(self) -> ShiftSchedule:
        pre, post = make_domains(self.pre_danger, self.post_danger)
        return ShiftSchedule(pre, post, self.shift_epoch)

    def replace(self, **changes) -> "ExperimentConfig":
        return ExperimentConfig(**{**asdict(self), **changes})


def load_config(path) -> ExperimentConfig:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, dict):
        raise ValueError("config must be a key/value object")
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(unknown)}")
    return ExperimentConfig(**raw)


@dataclass(frozen=True)
class MetricsRecord:
    method: str
    phase: str
    trial: int
    safe_success_rate: float
    violation_rate: float

    def __post_init__(self):
        if not 0.0 <= self.safe_success_rate <= 1.0:
            raise ValueError("safe_success_rate must lie in [0, 1]")
        if self.violation_rate < 0:
            raise ValueError("violation_rate must be nonnegative")


def hand_coded_table(d: DomainTag) -> ConstraintTable:
    """0.99 violation probability for moves into a danger cell of d, 0.01 elsewhere."""
    logits = np.full((1, N_STATES, N_ACTIONS), np.log(HAND_CODED_SAFE / (1 - HAND_CODED_SAFE)))
    for s, a in danger_leading_pairs(d):
        logits[0, s.index, a] = np.log(HAND_CODED_DANGER / (1 - HAND_CODED_DANGER))
    return ConstraintTable(logits)


def evaluate(
    policy: PolicyTable,
    d: DomainTag,
    n_episodes: int = 100,
    rng: np.random.Generator | None = None,
    max_steps: int = MAX_EPISODE_STEPS,
    method: str = "",
    phase: str = "",
    trial: int = 0,
) -> MetricsRecord:
    """Stochastic-policy evaluation: safe success rate and mean danger entries per episode."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    rng = rng if rng is not None else np.random.default_rng(0)
    successes = violations = 0
    for _ in range(n_episodes):
        traj = rollout(policy, d, rng, max_steps)
        v = traj.violations(0)
        violations += v
        successes += int(traj.terminated_at_goal and v == 0)
    return MetricsRecord(method, phase, trial, successes / n_episodes, violations / n_episodes)


@dataclass
class TrialResult:
    pre: MetricsRecord
    post: MetricsRecord
    policy: PolicyTable
    constraint: ConstraintTable | None
    beta_trace: list[dict] = field(default_factory=list)


class _DemoPool:
    """Per-trajectory label counts so minibatches reduce to row sums."""

    def __init__(self, demo_set, label_mode: str):
        self.pos = np.stack([label_counts([t], [], label_mode) for t in demo_set.positives])
        self.neg = np.stack([label_counts([], [t], label_mode) for t in demo_set.negatives])

    def sample(self, rng: np.random.Generator, batch: int):
        ip = rng.integers(len(self.pos), size=batch)
        ineg = rng.integers(len(self.neg), size=batch)
        counts = self.pos[ip].sum(axis=0) + self.neg[ineg].sum(axis=0)
        return counts[0], counts[1]


def _streams(seed: int) -> dict[str, np.random.Generator]:
    names = ("demos_pre", "demos_post", "clirl", "train", "eval_pre", "eval_post")
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {n: np.random.default_rng(c) for n, c in zip(names, children)}


def _demo_seed(rng: np.random.Generator) -> int:
    return int(rng.integers(2**63))


def run_trial(cfg: ExperimentConfig, method: str, trial: int = 0, seed: int | None = None) -> TrialResult:
    """Train one method through both phases and evaluate after each."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    seed = cfg.seed if seed is None else seed
    rng = _streams(seed)
    sched = cfg.schedule()
    risk = RiskConfig(cfg.cvar_alpha, cfg.cvar_weight)

    policy = PolicyTable()
    policy_adam = AdamState(lr=cfg.lr)
    ct: ConstraintTable | None = None
    ct_adam = AdamState(lr=cfg.constraint_lr)
    pool = None
    if method == "sail-carl":
        ct = ConstraintTable.zeros(1)
        pool = _DemoPool(generate_demoset(sched.pre, cfg.n_pos, cfg.n_neg, _demo_seed(rng["demos_pre"])), cfg.label_mode)
    elif method == "hand-coded":
        ct = hand_coded_table(sched.pre)
    mult = Multipliers((cfg.beta,), cfg.eta)
    trace: list[dict] = []
    pre_record = None

    for epoch in range(cfg.epochs):
        if epoch == sched.shift_epoch:
            pre_record = evaluate(policy, sched.pre, cfg.eval_episodes, rng["eval_pre"], cfg.max_steps, method, "pre", trial)
            if method == "sail-carl":
                post_demos = generate_demoset(sched.post, cfg.n_pos, cfg.n_neg, _demo_seed(rng["demos_post"]))
                pool = _DemoPool(post_demos, cfg.label_mode)
            elif method == "hand-coded":
                ct = hand_coded_table(sched.post)
        d = active_domain(sched, epoch)

        if pool is not None:
            for _ in range(cfg.clirl_steps):
                zeros, ones = pool.sample(rng["clirl"], cfg.demo_batch)
                ct, _, ct_adam = bce_step(ct, zeros, ones, ct_adam)

        batch = [rollout(policy, d, rng["train"], cfg.max_steps) for _ in range(cfg.episodes_per_epoch)]
        betas = mult.betas if cfg.penalty == "lagrangian" else (cfg.beta,)
        adv = penalized_advantages(batch, ct, cfg.gamma, betas, risk)
        behaviour = policy.probs()
        for _ in range(cfg.policy_iters):
            policy, policy_adam = policy_update(policy, batch, adv, policy_adam, cfg.clip, behaviour)

        if cfg.penalty == "lagrangian" and ct is not None:
            est = np.mean([trajectory_learned_cost(t, ct, cfg.gamma) for t in batch], axis=0)
            before = mult.betas
            mult = update_multipliers(mult, est.tolist(), cfg.thresholds[: len(est)])
            trace.append({"epoch": epoch, "cost_estimate": est.tolist(), "beta_before": list(before), "beta_after": list(mult.betas)})

    post_record = evaluate(policy, sched.post, cfg.eval_episodes, rng["eval_post"], cfg.max_steps, method, "post", trial)
    return TrialResult(pre_record, post_record, policy, ct, trace)


@dataclass
class ExperimentResult:
    records: list[MetricsRecord]
    summary: list[dict]
    trials: dict[tuple[str, int], TrialResult] = field(default_factory=dict)


def summarize(records: Sequence[MetricsRecord]) -> list[dict]:
    """Sample mean and (n - 1) standard deviation per method and phase."""
    groups: dict[tuple[str, str], list[MetricsRecord]] = {}
    for r in records:
        groups.setdefault((r.method, r.phase), []).append(r)
    rows = []
    for (method, phase), rs in groups.items():
        succ = [r.safe_success_rate for r in rs]
        viol = [r.violation_rate for r in rs]
        if len(rs) == 1:
            warnings.warn(f"{method}/{phase}: single trial, std reported as 0", stacklevel=2)
        rows.append(
            {
                "method": method,
                "phase": phase,
                "success_mean": statistics.fmean(succ),
                "success_std": statistics.stdev(succ) if len(rs) > 1 else 0.0,
                "violation_mean": statistics.fmean(viol),
                "violation_std": statistics.stdev(viol) if len(rs) > 1 else 0.0,
            }
        )
    return rows


RESULTS_HEADER = ("method", "phase", "trial", "safe_success_rate", "violation_rate")
SUMMARY_HEADER = ("method", "phase", "success_mean", "success_std", "violation_mean", "violation_std")


def _csv_text(header: Sequence[str], rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(header), lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> ExperimentResult:
    records: list[MetricsRecord] = []
    trials: dict[tuple[str, int], TrialResult] = {}
    for method in cfg.methods:
        for i in range(cfg.trials):
            res = run_trial(cfg, method, trial=i, seed=cfg.seed + i)
            trials[(method, i)] = res
            records += [res.pre, res.post]
            log.info("%s trial %d: pre %s post %s", method, i, res.pre, res.post)
    summary = summarize(records)
    result = ExperimentResult(records, summary, trials)
    if out_dir is not None:
        write_outputs(result, cfg, Path(out_dir))
    return result


def write_outputs(result: ExperimentResult, cfg: ExperimentConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "results.csv").write_text(_csv_text(RESULTS_HEADER, [asdict(r) for r in result.records]), encoding="utf-8")
    (out / "summary.csv").write_text(_csv_text(SUMMARY_HEADER, result.summary), encoding="utf-8")
    payload = {"config": asdict(cfg), "summary": result.summary, "records": [asdict(r) for r in result.records]}
    (out / "summary.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    first = result.trials.get(("sail-carl", 0))
    if first is not None and first.constraint is not None:
        save_model(out / "sail-carl_trial0_model.jsonl", first.constraint)
        emit_heatmap(first.constraint, out / "sail-carl_trial0_heatmap.csv")
    traces = {f"{m}/{i}": r.beta_trace for (m, i), r in result.trials.items() if r.beta_trace}
    if traces:
        (out / "beta_trace.json").write_text(json.dumps(traces, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def heatmap_grids(ct: ConstraintTable, k: int = 0) -> dict[str, np.ndarray]:
    """Violation probability per action as a (y, x) grid, row 0 is y = 0."""
    probs = sigmoid(ct.logits[k])
    grids = {}
    for a, name in enumerate(ACTIONS):
        g = np.empty((GRID_SIZE, GRID_SIZE))
        for i in range(N_STATES):
            s = GridState.from_index(i)
            g[s.y, s.x] = probs[i, a]
        grids[name] = g
    return grids


def emit_heatmap(ct: ConstraintTable, path, k: int = 0) -> None:
    """Write one CSV block per action to ``path`` and an SVG rendering beside it."""
    path = Path(path)
    grids = heatmap_grids(ct, k)
    lines = []
    for name, g in grids.items():
        lines.append(f"# action={name}")
        lines.append("y\\x," + ",".join(str(x) for x in range(GRID_SIZE)))
        for y in range(GRID_SIZE - 1, -1, -1):
            lines.append(f"{y}," + ",".join(f"{g[y, x]:.6f}" for x in range(GRID_SIZE)))
        lines.append("")
    path.write_text("\n".join(lines), encoding="utf-8")
    path.with_suffix(".svg").write_text(_heatmap_svg(grids), encoding="utf-8")


def _heatmap_svg(grids: dict[str, np.ndarray], cell: int = 40, gap: int = 30) -> str:
    width = len(grids) * (GRID_SIZE * cell + gap) + gap
    height = GRID_SIZE * cell + 2 * gap
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">']
    for j, (name, g) in enumerate(grids.items()):
        ox = gap + j * (GRID_SIZE * cell + gap)
        parts.append(f'<text x="{ox}" y="{gap - 8}">{name}</text>')
        for y in range(GRID_SIZE):
            for x in range(GRID_SIZE):
                v = float(g[y, x])
                shade = int(round(255 * v))
                px, py = ox + x * cell, gap + (GRID_SIZE - 1 - y) * cell
                parts.append(
                    f'<rect x="{px}" y="{py}" width="{cell}" height="{cell}" fill="rgb({shade},{shade // 2},{255 - shade})">'
                    f"<title>({x}, {y}) {name}: {v:.3f}</title></rect>"
                )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
