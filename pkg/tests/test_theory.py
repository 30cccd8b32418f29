import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tsalab import theory
from tsalab.core import Architecture
from tsalab.models import ModelParams, forward, loss_gradient
from tsalab.theory import (AT_TRANSITION, deterministic_limit_costs, optimal_gamma_tilde, optimal_student_weights,
                           predict, result1_optimal, result2_accuracy, result3_greedy_ss,
                           result4_sample_specific_ss, result5_mixing_ss)

costs = st.floats(0, 1e4)
batch = st.integers(1, 10**6)


def test_result1_examples():
    assert result1_optimal(0) == (1.0, 1.0)
    assert result1_optimal(1) == (0.5, 0.5)
    assert result1_optimal(1e12)[0] < 1e-11


def test_result1_student_weights(rng):
    wt = rng.standard_normal(6)
    ws = optimal_student_weights(1.0, wt, -wt)
    assert np.allclose(ws, 0.0)


def test_result2_examples():
    assert result2_accuracy(2) == 1
    assert result2_accuracy(0.5) == 0
    assert result2_accuracy(1) == AT_TRANSITION


def test_result3_examples():
    assert result3_greedy_ss(1, 1)[0] == pytest.approx(0.75, abs=1e-15)
    assert result3_greedy_ss(1, 10)[0] == pytest.approx(12 / 22, abs=1e-15)
    assert result3_greedy_ss(1, 1)[1] == pytest.approx(0.25, abs=1e-15)


def test_result4_and_5_examples():
    assert result4_sample_specific_ss(3) == pytest.approx(0.5, abs=1e-15)
    assert result4_sample_specific_ss(0) == 1.0
    assert result5_mixing_ss(1, 100, 0.5) == pytest.approx(52 / 152, abs=1e-15)


def test_optimal_gamma_tilde():
    assert optimal_gamma_tilde(10, 1, 0.2) == pytest.approx(50)
    assert optimal_gamma_tilde(10, 1, 0.4) == pytest.approx(25)


def test_negative_cost_rejected():
    with pytest.raises(ValueError):
        result3_greedy_ss(-1, 1)


@given(C=costs, P=batch)
def test_large_batch_limit(C, P):
    d3, _ = result3_greedy_ss(C, 10**12)
    assert d3 == pytest.approx(result1_optimal(C)[0], rel=1e-9)


@given(C=costs, P=batch)
def test_mixing_at_full_poisoning_is_greedy(C, P):
    assert abs(result5_mixing_ss(C, P, 1.0) - result3_greedy_ss(C, P)[0]) <= 1e-12


@given(C=costs)
def test_sample_specific_equals_single_sample_greedy(C):
    assert abs(result4_sample_specific_ss(C) - result3_greedy_ss(C, 1)[0]) <= 1e-12


@given(C=st.floats(0, 1e4).filter(lambda c: c != 1))
def test_accuracy_is_threshold_on_distance(C):
    assert result2_accuracy(C) == (1 if result1_optimal(C)[0] < 0.5 else 0)


@st.composite
def batch_and_fraction(draw):
    P = draw(st.integers(1, 10**4))
    return P, draw(st.integers(1, P)) / P


@given(c1=costs, c2=costs, p_rho=batch_and_fraction())
def test_distances_decrease_in_cost_and_stay_in_unit_interval(c1, c2, p_rho):
    lo, hi = sorted((c1, c2))
    P, rho = p_rho
    for f in (lambda c: result1_optimal(c)[0], lambda c: result3_greedy_ss(c, P)[0], result4_sample_specific_ss,
              lambda c: result5_mixing_ss(c, P, rho)):
        assert 0 < f(hi) <= f(lo) <= 1
        if hi > lo * (1 + 1e-9) + 1e-9:
            assert f(hi) < f(lo)


@given(C=costs, P=batch)
def test_mean_action_in_unit_interval(C, P):
    assert 0 <= result3_greedy_ss(C, P)[1] <= 1


def test_mixing_large_batch_rescales_cost():
    assert result5_mixing_ss(1, 10**9, 0.25) == pytest.approx(1 / (4 + 1), rel=1e-6)


def test_deterministic_gradient_zero_at_optimum(rng):
    D = 8
    wt = rng.standard_normal(D)
    wstar = -wt
    C = 1.7
    a = 1 / (C + 1)
    ws = wt + a * (wstar - wt)
    g_nef, grad = deterministic_limit_costs(ws, wt, wstar, a)
    assert np.allclose(grad, 0.0, atol=1e-14)
    assert g_nef == pytest.approx(np.sum((ws - wstar) ** 2) / (2 * D))
    assert deterministic_limit_costs(wstar, wt, wstar, 0.3)[0] == 0.0


def test_deterministic_gradient_matches_large_batch():
    rng = np.random.default_rng(3)
    D, P, a = 10, 100_000, 0.4
    wt, ws = rng.standard_normal(D), rng.standard_normal(D)
    X = rng.standard_normal((P, D))
    lin = Architecture("linear")
    y = (1 - a) * forward(lin, ModelParams(wt), X) + a * forward(lin, ModelParams(-wt), X)
    emp = loss_gradient(lin, ModelParams(ws), X, y).w
    _, grad = deterministic_limit_costs(ws, wt, -wt, a)
    assert np.linalg.norm(emp - grad) < 0.01 * np.linalg.norm(grad)


def test_predict_regimes():
    assert predict(1, 1).regime == "Result3"
    assert predict(1, 100, 0.5).regime == "Result5"
    assert predict(3, 5, strategy="greedy-sample").d_bar == pytest.approx(0.5)
    assert predict(1, strategy="optimal").regime == "Result1"
    assert theory.batch_factor(1) == pytest.approx(1 / 3)
