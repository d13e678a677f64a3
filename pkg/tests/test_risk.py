import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import cvar_sort_and_average
from sailcarl.risk import RiskConfig, cvar, tail_indices, tail_size, var

ALPHAS = (0.0, 0.5, 0.8, 0.9, 0.95)
ONE_TO_TEN = list(range(1, 11))


def test_cvar_examples():
    assert cvar(ONE_TO_TEN, 0.9) == 10.0
    assert cvar(ONE_TO_TEN, 0.8) == 9.5
    assert cvar([3.0, 1.0, 8.0], 0.0) == pytest.approx(4.0)


def test_var_examples():
    assert var(ONE_TO_TEN, 0.9) == 9.0
    assert var([2.5] * 7, 0.3) == 2.5
    assert var([5.0], 0.95) == 5.0


@pytest.mark.parametrize("fn", [cvar, var])
def test_errors(fn):
    with pytest.raises(ValueError):
        fn([], 0.5)
    with pytest.raises(ValueError):
        fn([1.0], 1.0)
    with pytest.raises(ValueError):
        fn([1.0], -0.1)


def test_risk_config_validation():
    RiskConfig(0.0, 0.0)
    with pytest.raises(ValueError):
        RiskConfig(alpha=1.0)
    with pytest.raises(ValueError):
        RiskConfig(weight=-1.0)


def test_tail_ties_take_lower_index():
    assert list(tail_indices([1.0, 5.0, 5.0, 5.0], 0.5)) == [1, 2]
    assert tail_size(10, 0.9) == 1
    assert tail_size(3, 0.0) == 3


int_lists = st.lists(st.integers(-100, 100), min_size=1, max_size=40)


@settings(max_examples=200, deadline=None)
@given(int_lists, st.sampled_from(ALPHAS))
def test_cvar_matches_oracle(costs, alpha):
    assert cvar(costs, alpha) == cvar_sort_and_average(costs, alpha)


@settings(max_examples=200, deadline=None)
@given(int_lists)
def test_cvar_monotone_and_bounds(costs):
    values = [cvar(costs, a) for a in ALPHAS]
    assert all(b >= a for a, b in zip(values, values[1:]))
    mean = float(np.mean(costs))
    for a, v in zip(ALPHAS, values):
        assert v >= mean - 1e-12
        assert v >= var(costs, a)


@settings(max_examples=100, deadline=None)
@given(st.integers(-50, 50), st.integers(1, 30), st.sampled_from(ALPHAS))
def test_cvar_equals_mean_on_constant(c, n, alpha):
    assert cvar([c] * n, alpha) == c


@settings(max_examples=100, deadline=None)
@given(int_lists, st.sampled_from(ALPHAS), st.integers(-20, 20), st.integers(1, 9))
def test_cvar_translation_and_scaling(costs, alpha, shift, scale):
    base = cvar(costs, alpha)
    assert cvar([c + shift for c in costs], alpha) == pytest.approx(base + shift, abs=1e-9)
    assert cvar([c * scale for c in costs], alpha) == pytest.approx(base * scale, abs=1e-9)
