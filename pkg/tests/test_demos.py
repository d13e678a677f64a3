import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sailcarl.demos import (
    DemoFormatError,
    DemoSet,
    generate_demoset,
    generate_negative,
    generate_positive,
    load_demos,
    negative_problem,
    positive_problem,
    save_demos,
)
from sailcarl.gridworld import GOAL, THETA1, THETA2, GridState, is_danger


def test_positive_theta1():
    (t,) = generate_positive(THETA1, 1, rng_seed=3)
    assert t.steps[-1].next_state == GOAL
    assert 8 <= len(t) <= 50
    assert not any(st.next_state == GridState(2, 2) for st in t.steps)
    t.check()


def test_positive_theta2_avoids_both():
    trajs = generate_positive(THETA2, 10, rng_seed=0)
    assert len(trajs) == 10
    for t in trajs:
        assert positive_problem(t, THETA2) is None
        assert not any(is_danger(st.next_state, THETA2) for st in t.steps)


def test_negative_examples():
    (t,) = generate_negative(THETA1, 1, rng_seed=0)
    assert any(st.next_state == GridState(2, 2) for st in t.steps)
    trajs = generate_negative(THETA2, 5, rng_seed=1)
    for t in trajs:
        assert any(st.next_state in (GridState(2, 2), GridState(3, 3)) for st in t.steps)
        t.check()


def test_counts_required():
    with pytest.raises(ValueError, match="positive count"):
        generate_positive(THETA1, 0, 0)
    with pytest.raises(ValueError):
        generate_negative(THETA1, 0, 0)


def test_negative_tail_is_bounded():
    for t in generate_negative(THETA2, 50, rng_seed=4):
        first = next(i for i, st in enumerate(t.steps) if st.costs[0])
        assert len(t) - 1 - first <= 5


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([THETA1, THETA2]))
def test_generated_corpora_satisfy_invariants(seed, d):
    ds = generate_demoset(d, 20, 20, seed)
    ds.validate()
    assert all(positive_problem(t, d) is None for t in ds.positives)
    assert all(negative_problem(t, d) is None for t in ds.negatives)


def test_generation_reproducible(tmp_path):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    save_demos(generate_demoset(THETA2, 15, 15, 42), a)
    save_demos(generate_demoset(THETA2, 15, 15, 42), b)
    assert a.read_bytes() == b.read_bytes()


def test_round_trip(tmp_path):
    ds = DemoSet(generate_positive(THETA1, 1, 5), generate_negative(THETA1, 1, 6), THETA1)
    path = tmp_path / "demos.jsonl"
    save_demos(ds, path)
    back = load_demos(path)
    assert back == ds


def test_file_schema(tmp_path):
    path = tmp_path / "demos.jsonl"
    save_demos(DemoSet(generate_positive(THETA1, 1, 5), [], THETA1), path)
    rec = json.loads(path.read_text().splitlines()[0])
    assert list(rec) == ["domain", "kind", "steps"]
    x, y, action, nx, ny, reward, costs = rec["steps"][0]
    assert rec["kind"] == "pos" and action in ("north", "south", "east", "west")
    assert costs == [0]


def test_load_rejects_negative_without_violation(tmp_path):
    path = tmp_path / "bad.jsonl"
    good = DemoSet(generate_positive(THETA1, 1, 5), [], THETA1)
    save_demos(good, path)
    line = json.loads(path.read_text())
    line["kind"] = "neg"
    path.write_text(path.read_text() + json.dumps(line) + "\n")
    with pytest.raises(DemoFormatError, match="line 2: invariant breach"):
        load_demos(path)


def test_load_empty_file(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("")
    ds = load_demos(path)
    assert ds.positives == [] and ds.negatives == []


def test_load_reports_schema_line(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"domain": "theta1", "kind": "pos"}\n')
    with pytest.raises(DemoFormatError, match="line 1"):
        load_demos(path)
