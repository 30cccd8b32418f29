import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tsalab.attacks import (Attacker, ClampCounter, action_grid, calibrate_gamma_tilde, clamp_action,
                            constant_attack_calibrate, estimate_target_error, greedy_action_generic,
                            greedy_action_linear, greedy_action_partial, greedy_action_sample_specific,
                            greedy_leading_term, nefarious_cost, perturb_labels, perturbation_cost)
from tsalab.core import Architecture, TSAConfig, set_dotted, validate
from tsalab.models import ModelParams, forward
from tsalab.stream import BufferEmptyError, LabeledBatch, ObservationBuffer, make_teacher_and_target

LINEAR, ERF = Architecture("linear"), Architecture("erf")


def whitened(rng, n, D):
    """Rows with sample covariance exactly the identity."""
    Z = rng.standard_normal((n, D))
    L = np.linalg.cholesky(Z.T @ Z / n)
    return Z @ np.linalg.inv(L).T


def linear_instance(rng, D=10, P=4):
    wt = rng.standard_normal(D)
    wt *= math.sqrt(D) / np.linalg.norm(wt)
    ws = wt + 0.5 * rng.standard_normal(D)
    return ws, wt, -wt, rng.standard_normal((P, D))


def batch_for(arch, teacher, target, X):
    return LabeledBatch(X, forward(arch, teacher, X), forward(arch, target, X), np.ones(len(X), dtype=bool))


def filled_buffer(rng, n, D):
    buf = ObservationBuffer(n, D)
    buf.push(rng.standard_normal((n, D)))
    return buf


def test_perturb_examples():
    yc, ys = np.array([0.3, -1.0]), np.array([-0.3, 1.0])
    assert np.array_equal(perturb_labels(yc, ys, 0.0), yc)
    assert np.allclose(perturb_labels(yc, ys, 1.0), ys)
    assert perturb_labels(np.array([2.0]), np.array([-2.0]), 0.5)[0] == 0.0


def test_perturb_clamps_and_counts():
    c = ClampCounter()
    y = perturb_labels(np.array([1.0]), np.array([-1.0]), 5.0, bounds=(0.0, 1.0), counter=c)
    assert y[0] == -1.0 and c.clamped == 1


def test_perturb_respects_mask():
    y = perturb_labels(np.ones(3), -np.ones(3), 1.0, mask=np.array([True, False, True]))
    assert y.tolist() == [-1.0, 1.0, -1.0]


def test_perturbation_cost_forms():
    assert perturbation_cost(0.5, 4.0) == pytest.approx(0.5)
    assert perturbation_cost(np.array([1.0, 0.0]), 4.0) == pytest.approx(1.0)


def test_target_error_label_flip_is_four(rng):
    cfg = validate(TSAConfig(D=10))
    t, s = make_teacher_and_target(rng, cfg)
    assert estimate_target_error(LINEAR, t, s) == pytest.approx(4.0)
    assert estimate_target_error(LINEAR, t, t) == 0.0


def test_target_error_mc_agrees_with_exact(rng):
    cfg = validate(TSAConfig(D=10))
    t, s = make_teacher_and_target(rng, cfg)
    n = 10_000
    X = np.random.default_rng(9).standard_normal((n, 10))
    sq = (forward(LINEAR, s, X) - forward(LINEAR, t, X)) ** 2
    mc = estimate_target_error(LINEAR, t, s, np.random.default_rng(9), n_mc=n, exact=False)
    assert abs(mc - 4.0) < 3 * sq.std() / math.sqrt(n)


def test_nefarious_cost_examples(rng):
    cfg = validate(TSAConfig(D=10))
    t, s = make_teacher_and_target(rng, cfg)
    X = rng.standard_normal((10_000, 10))
    assert nefarious_cost(LINEAR, s, s, X) == 0.0
    assert nefarious_cost(LINEAR, t, s, X) == pytest.approx(2.0, rel=0.05)
    assert nefarious_cost(LINEAR, ModelParams(np.ones(1)), ModelParams(-np.ones(1)), np.ones((1, 1))) == 2.0


def test_leading_term_hand_value():
    a = greedy_leading_term(np.ones(1), np.ones(1), -np.ones(1), np.ones((1, 1)), C_tilde=4.0)
    assert a == pytest.approx(1.0)


def test_leading_term_zero_at_target(rng):
    ws, wt, wstar, X = linear_instance(rng)
    assert greedy_leading_term(wstar, wt, wstar, X, 4.0) == 0.0


def test_exact_greedy_approaches_leading_term(rng):
    ws, wt, wstar, X = linear_instance(rng, P=3)
    lead = greedy_leading_term(ws, wt, wstar, X, 4.0)
    gaps = []
    for eta in (1e-3, 5e-4, 2.5e-4):
        exact = greedy_action_linear(ws, wt, wstar, X, 4.0, eta=eta, gamma_tilde=10 / eta)
        gaps.append(abs(exact - lead))
    assert gaps[0] / gaps[1] >= 1.9 and gaps[1] / gaps[2] >= 1.9


def test_sample_specific_p1_equals_leading_term(rng):
    ws, wt, wstar, X = linear_instance(rng, P=1)
    a = greedy_action_sample_specific(ws, wt, wstar, X, 4.0)
    assert a[0] == pytest.approx(greedy_leading_term(ws, wt, wstar, X, 4.0))
    assert np.array_equal(greedy_action_sample_specific(wstar, wt, wstar, X, 4.0), np.zeros(1))


def test_partial_full_batch_equals_leading_term(rng):
    ws, wt, wstar, X = linear_instance(rng, P=6)
    assert greedy_action_partial(ws, wt, wstar, X, 4.0) == pytest.approx(greedy_leading_term(ws, wt, wstar, X, 4.0))
    assert abs(greedy_action_partial(ws, wt, wstar, X, 1e12)) < 1e-9
    with pytest.raises(ValueError):
        greedy_action_partial(ws, wt, wstar, X[:0], 4.0)


@settings(max_examples=40)
@given(seed=st.integers(0, 2**32 - 1), P=st.integers(1, 5), eta=st.floats(0.01, 0.5), C=st.floats(0.1, 5.0))
def test_generic_greedy_matches_closed_form(seed, P, eta, C):
    rng = np.random.default_rng(seed)
    D = 10
    ws, wt, wstar, X = linear_instance(rng, D, P)
    eval_x = whitened(rng, 400, D)
    gt = D / eta
    grid = action_grid(-2.0, 3.0, 501)
    exact = greedy_action_linear(ws, wt, wstar, X, 4 * C, eta=eta, gamma_tilde=gt, bounds=(-2.0, 3.0))
    generic = greedy_action_generic(LINEAR, ModelParams(ws), ModelParams(wstar),
                                    batch_for(LINEAR, ModelParams(wt), ModelParams(wstar), X), eval_x, 4 * C,
                                    gt, eta, grid)
    assert abs(generic - exact) <= grid[1] - grid[0]


@settings(max_examples=20)
@given(seed=st.integers(0, 2**32 - 1), P=st.integers(2, 6), eta=st.floats(0.01, 0.5))
def test_generic_greedy_matches_closed_form_with_partial_mask(seed, P, eta):
    rng = np.random.default_rng(seed)
    ws, wt, wstar, X = linear_instance(rng, 10, P)
    mask = np.zeros(P, dtype=bool)
    mask[: P // 2] = True
    grid = action_grid(-2.0, 3.0, 501)
    exact = greedy_action_linear(ws, wt, wstar, X, 4.0, eta=eta, gamma_tilde=10 / eta, bounds=(-2, 3), mask=mask)
    generic = greedy_action_generic(LINEAR, ModelParams(ws), ModelParams(wstar),
                                    batch_for(LINEAR, ModelParams(wt), ModelParams(wstar), X),
                                    whitened(rng, 400, 10), 4.0, 10 / eta, eta, grid, mask=mask)
    assert abs(generic - exact) <= grid[1] - grid[0]


@pytest.mark.parametrize("arch", [LINEAR, ERF, Architecture("nn", 2)], ids=lambda a: a.kind)
def test_generic_greedy_zero_at_target(arch, rng):
    cfg = validate(set_dotted(TSAConfig(P=3), {"arch.kind": arch.kind, "arch.M": arch.M}))
    t, s = make_teacher_and_target(rng, cfg)
    X = rng.standard_normal((3, 10))
    grid = action_grid(-2.0, 3.0, 501)
    a = greedy_action_generic(arch, s, s, batch_for(arch, t, s, X), rng.standard_normal((200, 10)), 4.0,
                              10 / 1e-4, 1e-4, grid)
    assert a == 0.0


def test_generic_greedy_infinite_cost_gives_zero(rng):
    ws, wt, wstar, X = linear_instance(rng)
    grid = action_grid(-2.0, 3.0, 501)
    a = greedy_action_generic(ERF, ModelParams(ws), ModelParams(wstar),
                              batch_for(ERF, ModelParams(wt), ModelParams(wstar), X), rng.standard_normal((50, 10)),
                              1e12, 50.0, 0.2, grid)
    assert a == 0.0


def test_generic_greedy_needs_samples(rng):
    ws, wt, wstar, X = linear_instance(rng)
    with pytest.raises(BufferEmptyError):
        greedy_action_generic(LINEAR, ModelParams(ws), ModelParams(wstar),
                              batch_for(LINEAR, ModelParams(wt), ModelParams(wstar), X), np.empty((0, 10)), 4.0,
                              50.0, 0.2, action_grid(-2, 3, 11))


def test_ties_go_to_smallest_magnitude():
    grid = np.array([-1.0, -0.5, 0.5, 1.0])
    from tsalab.attacks import grid_argmin
    assert grid_argmin(grid, np.array([0.0, 1.0, 1.0, 0.0])) == 0
    assert grid_argmin(grid, np.array([2.0, 1.0, 1.0, 3.0])) == 1


@given(seed=st.integers(0, 2**32 - 1), c1=st.floats(0.01, 100), c2=st.floats(0.01, 100))
def test_greedy_magnitude_non_increasing_in_cost(seed, c1, c2):
    lo, hi = sorted((c1, c2))
    ws, wt, wstar, X = linear_instance(np.random.default_rng(seed))
    kw = dict(eta=0.2, gamma_tilde=50.0)
    assert abs(greedy_action_linear(ws, wt, wstar, X, hi, **kw)) <= abs(greedy_action_linear(ws, wt, wstar, X, lo, **kw)) + 1e-15


def test_closed_form_is_clamped(rng):
    ws, wt, wstar, X = linear_instance(rng)
    c = ClampCounter()
    a = greedy_action_linear(ws, wt, wstar, X, 1e-9, eta=0.2, gamma_tilde=50.0, bounds=(0.0, 0.1), counter=c)
    assert a in (0.0, 0.1) and c.clamped == 1
    assert clamp_action(np.array([-3.0, 0.5]), -2, 3).tolist() == [-2.0, 0.5]


def calibration_setup(P, C, seed=0, eta=0.02):
    cfg = validate(TSAConfig(P=P, C=C, eta=eta))
    rng = np.random.default_rng(seed)
    t, s = make_teacher_and_target(rng, cfg)
    return cfg, t, s, filled_buffer(rng, 10 * P * 10, 10), rng


def test_constant_calibration_huge_cost_gives_zero():
    cfg, t, s, buf, rng = calibration_setup(P=1, C=1e6)
    grid = np.linspace(-0.5, 0.5, 11)
    a, _ = constant_attack_calibrate(cfg, t, t, s, buf, rng, 4e6, grid, n_streams=1, length=200)
    assert a == 0.0


# eta=0.5 keeps the relaxation time D/eta well inside the 1/(1-gamma) horizon,
# so the discounted cost is dominated by the steady state
def test_constant_calibration_large_batch():
    cfg, t, s, buf, rng = calibration_setup(P=1000, C=1.0, eta=0.5)
    grid = np.linspace(0.0, 1.0, 21)
    a, costs = constant_attack_calibrate(cfg, t, t, s, buf, rng, 4.0, grid, n_streams=1, length=1500)
    assert a == pytest.approx(0.5, rel=0.1)
    assert costs.shape == grid.shape


def test_constant_calibration_boundary_warns():
    cfg, t, s, buf, rng = calibration_setup(P=1, C=1.0)
    with pytest.warns(RuntimeWarning, match="boundary"):
        constant_attack_calibrate(cfg, t, t, s, buf, rng, 4.0, np.array([0.0, 0.05, 0.1]), n_streams=1, length=300)


def test_calibration_needs_buffer():
    cfg, t, s, _, rng = calibration_setup(P=1, C=1.0)
    with pytest.raises(BufferEmptyError):
        constant_attack_calibrate(cfg, t, t, s, ObservationBuffer(4, 10), rng, 4.0, np.array([0.0, 1.0]))
    with pytest.raises(BufferEmptyError):
        calibrate_gamma_tilde(cfg, t, t, s, ObservationBuffer(4, 10), rng, 4.0, np.array([1.0, 2.0]))


def test_gamma_tilde_single_value_grid():
    cfg, t, s, buf, rng = calibration_setup(P=1, C=1.0)
    g, _ = calibrate_gamma_tilde(cfg, t, t, s, buf, rng, 4.0, np.array([37.0]))
    assert g == 37.0


def test_gamma_tilde_large_batch_optimum():
    cfg, t, s, buf, rng = calibration_setup(P=1000, C=1.0, eta=0.5)
    center = cfg.D / cfg.eta
    grid = center * 2.0 ** np.arange(-2, 3)
    g, costs = calibrate_gamma_tilde(cfg, t, t, s, buf, rng, 4.0, grid, n_streams=1, length=1500)
    assert abs(np.log2(g / center)) <= 1


def test_attacker_constant_and_none(rng):
    cfg = validate(set_dotted(TSAConfig(P=4), {"attack.strategy": "constant"}))
    t, s = make_teacher_and_target(rng, cfg)
    att = Attacker(cfg, t, s, 4.0, filled_buffer(rng, 40, 10), rng, a_const=0.3)
    b = batch_for(LINEAR, t, s, rng.standard_normal((4, 10)))
    a_vec, a, g_per = att.act(t, b)
    assert a == 0.3 and np.allclose(a_vec, 0.3) and g_per == pytest.approx(0.18)
    none = Attacker(validate(set_dotted(cfg, {"attack.strategy": "none"})), t, s, 4.0, att.buffer, rng)
    assert none.act(t, b)[1] == 0.0
