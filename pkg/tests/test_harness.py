import csv
import io
import json
import warnings

import numpy as np
import pytest

from oracles import path_policy_q
from sailcarl.capo import PolicyTable
from sailcarl.cli import main
from sailcarl.clirl import ConstraintTable, bce_step, label_counts, load_model, save_model
from sailcarl.demos import generate_demoset, load_demos
from sailcarl.gridworld import ACTIONS, N_ACTIONS, STATES, THETA1, THETA2, DomainTag, GridState, bfs_safe_oracle, danger_leading_pairs
from sailcarl.harness import (
    RESULTS_HEADER,
    SUMMARY_HEADER,
    ExperimentConfig,
    MetricsRecord,
    emit_heatmap,
    evaluate,
    hand_coded_table,
    heatmap_grids,
    load_config,
    run_experiment,
    run_trial,
    summarize,
)
from sailcarl.optim import AdamState

N, S, E, W = range(4)
CITED = {  # action -> cells whose move enters (2,2) or (3,3)
    "north": {(2, 1), (3, 2)},
    "south": {(2, 3), (3, 4)},
    "east": {(1, 2), (2, 3)},
    "west": {(3, 2), (4, 3)},
}
TINY = dict(
    trials=2, epochs=4, shift_epoch=2, episodes_per_epoch=4, eval_episodes=10, n_pos=10, n_neg=10,
    demo_batch=4, clirl_steps=2, policy_iters=2,
)


def oracle_policy(d):
    path = bfs_safe_oracle(d)
    return PolicyTable(path_policy_q({(s.x, s.y): a for s, a in zip(path.path, path.actions)}))


def test_hand_coded_examples():
    p1 = hand_coded_table(THETA1).probs()[0]
    assert p1[GridState(2, 1).index, N] == pytest.approx(0.99, abs=1e-15)
    assert p1[GridState(0, 0).index, E] == pytest.approx(0.01, abs=1e-15)
    p2 = hand_coded_table(THETA2).probs()[0]
    assert p2[GridState(3, 2).index, E] == pytest.approx(0.01, abs=1e-15)
    assert p2[GridState(3, 2).index, N] == pytest.approx(0.99, abs=1e-15)
    assert p2[GridState(2, 3).index, E] == pytest.approx(0.99, abs=1e-15)


@pytest.mark.parametrize("d", [THETA1, THETA2, DomainTag("odd", frozenset({GridState(0, 4), GridState(4, 0)}))])
def test_hand_coded_agrees_with_danger_pairs(d):
    p = hand_coded_table(d).probs()[0]
    leading = {(s.index, a) for s, a in danger_leading_pairs(d)}
    for s in STATES:
        for a in range(N_ACTIONS):
            want = 0.99 if (s.index, a) in leading else 0.01
            assert p[s.index, a] == pytest.approx(want, abs=1e-15)


def test_evaluate_oracle_path_policy_is_perfect():
    rec = evaluate(oracle_policy(THETA2), THETA2, 100, np.random.default_rng(0))
    assert rec.safe_success_rate == 1.0
    assert rec.violation_rate == 0.0


def test_evaluate_loop_in_place():
    pt = PolicyTable(path_policy_q({(0, 0): W}))
    pt.q[:, W] = 60.0
    rec = evaluate(pt, THETA1, 20, np.random.default_rng(0))
    assert (rec.safe_success_rate, rec.violation_rate) == (0.0, 0.0)


def test_evaluate_double_crossing():
    bounce = PolicyTable(path_policy_q({(0, 0): E, (1, 0): E, (2, 0): N, (2, 1): N, (2, 2): S}))
    rec = evaluate(bounce, THETA1, 10, np.random.default_rng(0), max_steps=6)
    assert rec.violation_rate == 2.0
    assert rec.safe_success_rate == 0.0


def test_evaluate_counts_new_danger_cell_under_shift():
    # east along y=0, north up x=3 passes (3,3) then east to the goal
    policy = PolicyTable(path_policy_q({(0, 0): E, (1, 0): E, (2, 0): E, (3, 0): N, (3, 1): N, (3, 2): N, (3, 3): N, (3, 4): E}))
    assert evaluate(policy, THETA1, 5).safe_success_rate == 1.0
    post = evaluate(policy, THETA2, 5)
    assert (post.safe_success_rate, post.violation_rate) == (0.0, 1.0)


def test_evaluate_rejects_zero_episodes():
    with pytest.raises(ValueError):
        evaluate(PolicyTable(), THETA1, 0)


def test_metrics_record_bounds():
    with pytest.raises(ValueError):
        MetricsRecord("m", "pre", 0, 1.5, 0.0)
    with pytest.raises(ValueError):
        MetricsRecord("m", "pre", 0, 0.5, -1.0)
    MetricsRecord("m", "pre", 0, 0.5, 3.2)


@pytest.mark.parametrize("method", ["sail-carl", "no-constraint", "hand-coded"])
def test_run_trial_deterministic(method):
    cfg = ExperimentConfig(**TINY)
    a, b = run_trial(cfg, method, seed=3), run_trial(cfg, method, seed=3)
    assert a.pre == b.pre and a.post == b.post
    assert np.array_equal(a.policy.q, b.policy.q)
    assert a.pre.phase == "pre" and a.post.phase == "post"


def test_run_trial_baselines():
    cfg = ExperimentConfig(**TINY)
    assert run_trial(cfg, "no-constraint").constraint is None
    hand = run_trial(cfg, "hand-coded").constraint
    assert np.array_equal(hand.logits, hand_coded_table(THETA2).logits)
    with pytest.raises(ValueError):
        run_trial(cfg, "oracle")


def test_single_trial_warns_and_reports_zero_std():
    recs = [MetricsRecord("m", "pre", 0, 0.3, 1.2)]
    with pytest.warns(UserWarning, match="single trial"):
        rows = summarize(recs)
    assert rows[0]["success_std"] == 0.0 and rows[0]["violation_mean"] == 1.2


def test_summarize_sample_std():
    recs = [MetricsRecord("m", "post", i, v, 2 * v) for i, v in enumerate((0.1, 0.2, 0.6))]
    row = summarize(recs)[0]
    assert row["success_mean"] == pytest.approx(0.3)
    assert row["success_std"] == pytest.approx(np.std([0.1, 0.2, 0.6], ddof=1))
    assert row["violation_std"] == pytest.approx(np.std([0.2, 0.4, 1.2], ddof=1))


def _read_heatmap(path):
    blocks, name = {}, None
    for line in path.read_text().splitlines():
        if line.startswith("# action="):
            name = line.split("=", 1)[1]
            blocks[name] = {}
        elif line and not line.startswith("y\\x"):
            y, *vals = line.split(",")
            blocks[name][int(y)] = [float(v) for v in vals]
    return blocks


def test_emit_heatmap_zero_table(tmp_path):
    out = tmp_path / "heat.csv"
    emit_heatmap(ConstraintTable.zeros(1), out)
    blocks = _read_heatmap(out)
    assert list(blocks) == list(ACTIONS)
    for rows in blocks.values():
        assert sorted(rows) == [0, 1, 2, 3, 4]
        assert all(v == 0.5 for r in rows.values() for v in r)
    assert out.with_suffix(".svg").read_text().startswith("<svg")


def test_emit_heatmap_hand_coded(tmp_path):
    out = tmp_path / "heat.csv"
    emit_heatmap(hand_coded_table(THETA2), out)
    north = _read_heatmap(out)["north"]
    assert north[1][2] == 0.99 and north[2][3] == 0.99
    assert north[0][0] == 0.01
    values = [v for b in _read_heatmap(out).values() for r in b.values() for v in r]
    assert all(0 <= v <= 1 for v in values)


def test_trained_table_peaks_on_cited_cells():
    ds = generate_demoset(THETA2, 200, 200, 3)
    zeros, ones = label_counts(ds.positives, ds.negatives, "transition")
    ct, adam = ConstraintTable.zeros(1), AdamState(lr=0.01)
    for _ in range(500):
        ct, _, adam = bce_step(ct, zeros, ones, adam)
    grids = heatmap_grids(ct)
    for name, cells in CITED.items():
        g = grids[name]
        low = min(g[y, x] for x, y in cells)
        others = max(g[y, x] for y in range(5) for x in range(5) if (x, y) not in cells)
        assert low > others


def test_config_loading(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"trials": 3, "penalty": "lagrangian", "post_danger": [[2, 2], [3, 3]]}))
    cfg = load_config(path)
    assert cfg.trials == 3 and cfg.penalty == "lagrangian"
    assert cfg.schedule().post == THETA2
    path.write_text(json.dumps({"trials": 3, "batch_size": 8}))
    with pytest.raises(ValueError, match="batch_size"):
        load_config(path)


@pytest.mark.parametrize(
    "bad", [{"trials": 0}, {"shift_epoch": 200}, {"max_steps": 0}, {"method": "ppo"}, {"label_mode": "x"}, {"cvar_alpha": 1.0}]
)
def test_config_invariants(bad):
    with pytest.raises(ValueError):
        ExperimentConfig(**bad)


def test_run_experiment_writes_outputs(tmp_path):
    cfg = ExperimentConfig(**TINY, penalty="lagrangian")
    res = run_experiment(cfg, tmp_path)
    rows = list(csv.DictReader(io.StringIO((tmp_path / "results.csv").read_text())))
    assert tuple(rows[0]) == RESULTS_HEADER
    assert len(rows) == 3 * 2 * 2
    summary = list(csv.DictReader(io.StringIO((tmp_path / "summary.csv").read_text())))
    assert tuple(summary[0]) == SUMMARY_HEADER and len(summary) == 6
    for r in res.summary:
        assert 0 <= r["success_mean"] <= 1 and r["violation_mean"] >= 0
    ct, _ = load_model(tmp_path / "sail-carl_trial0_model.jsonl")
    assert ct.logits.shape == (1, 25, 4)
    traces = json.loads((tmp_path / "beta_trace.json").read_text())
    assert set(traces) == {"sail-carl/0", "sail-carl/1", "hand-coded/0", "hand-coded/1"}


def test_cli_oracle(capsys):
    assert main(["oracle", "--domain", "post"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["length"] == 8 and out["path"][0] == "You are in room (0, 0)"
    assert out["path"][-1] == "You are in room (4, 4)"


def test_cli_demos_and_heatmap(tmp_path):
    demo_file = tmp_path / "d.jsonl"
    assert main(["demos", "--domain", "pre", "--pos", "3", "--neg", "2", "--out", str(demo_file), "--seed", "5"]) == 0
    ds = load_demos(demo_file)
    assert (len(ds.positives), len(ds.negatives)) == (3, 2)
    model = tmp_path / "m.jsonl"
    save_model(model, hand_coded_table(THETA1))
    heat = tmp_path / "h.csv"
    assert main(["heatmap", "--model", str(model), "--out", str(heat)]) == 0
    assert _read_heatmap(heat)["north"][1][2] == 0.99


def test_cli_rejects_bad_arguments(capsys):
    with pytest.raises(SystemExit):
        main(["demos", "--domain", "mid", "--pos", "1", "--neg", "1", "--out", "x", "--seed", "1"])
    with pytest.raises(SystemExit):
        main(["run", "--config", "c.json", "--out", "o", "--seed", "-1"])


def test_cli_run(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(TINY))
    out = tmp_path / "out"
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        assert main(["run", "--config", str(cfg), "--out", str(out), "--seed", "4", "--trials", "1", "--method", "no-constraint"]) == 0
    text = (out / "results.csv").read_text().splitlines()
    assert text[0] == ",".join(RESULTS_HEADER)
    assert len(text) == 3 and text[1].startswith("no-constraint,pre,0,")
    assert "no-constraint" in capsys.readouterr().out
