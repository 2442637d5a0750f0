import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from staggered_synth import errors, weights as sw
from conftest import make_panel
from oracles import grid_objective, simplex_grid, slsqp_weights


def _panel(Y_pre, S=1):
    N, T = Y_pre.shape
    Y = np.hstack([Y_pre, np.zeros((N, S))])
    D = np.zeros_like(Y, dtype=int)
    D[0, T:] = 1
    return make_panel(Y, D)


def test_grid_oracle_small_instances(rng):
    grids = {J: simplex_grid(J) for J in (1, 2, 3)}
    for _ in range(25):
        N = int(rng.integers(2, 5))
        Y = rng.normal(size=(N, 50))
        wm = sw.fit_all_array(Y)
        for i in range(N):
            ref = grid_objective(Y[i], np.delete(Y, i, 0), grids[N - 1])
            assert wm.fits[i].objective <= ref + 1e-10
            assert ref - wm.fits[i].objective <= 1e-4


def test_exact_representation_recovered(rng):
    T = 30
    j, k = rng.normal(size=(2, T))
    other = rng.normal(size=T)
    y = 0.3 * j + 0.7 * k + 5.0
    fit = sw.fit_unit_weights(_panel(np.vstack([y, j, k, other])), 0)
    assert fit.intercept == pytest.approx(5.0, abs=1e-6)
    np.testing.assert_allclose(fit.weights, [0, 0.3, 0.7, 0], atol=1e-6)
    assert fit.objective == pytest.approx(0.0, abs=1e-9)


def test_two_units_single_donor():
    Y = np.array([[1.0, 3.0, 2.0, 6.0], [0.0, 1.0, 1.0, 2.0]])
    fit = sw.fit_unit_weights(_panel(Y), 0)
    np.testing.assert_array_equal(fit.weights, [0.0, 1.0])
    assert fit.intercept == pytest.approx(Y[0].mean() - Y[1].mean())


def test_identical_units_fit_exactly(rng):
    y = rng.normal(size=20)
    Y = np.vstack([y, y, y])
    wm = sw.fit_all_array(Y)
    assert np.allclose(np.diag(wm.B), 0)
    np.testing.assert_allclose(wm.B.sum(axis=1), 1.0)
    np.testing.assert_allclose(wm.residuals(Y), 0.0, atol=1e-12)
    assert wm.non_unique == [0, 1, 2]


def test_M_matches_direct_product(rng):
    Y = rng.normal(size=(5, 40))
    wm = sw.fit_all_array(Y)
    IB = np.eye(5) - wm.B
    np.testing.assert_allclose(wm.M, IB.T @ IB, atol=1e-14)


def test_agrees_with_general_optimiser(rng):
    for _ in range(30):
        N = int(rng.integers(3, 8))
        Y = rng.normal(size=(N, 25)).cumsum(axis=1)
        wm = sw.fit_all_array(Y)
        for i in range(N):
            _, _, ref = slsqp_weights(Y[i], np.delete(Y, i, 0))
            assert wm.fits[i].objective <= ref + 1e-8 * max(1.0, ref)


def test_constant_donors_warn_and_still_fit():
    Y = np.vstack([np.arange(6.0), np.full(6, 2.0), np.full(6, 2.0)])
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        fit = sw.fit_unit_weights(_panel(Y), 0)
    assert any(issubclass(w.category, errors.DegenerateDonors) for w in rec)
    assert fit.weights.sum() == pytest.approx(1.0)
    assert fit.intercept == pytest.approx(2.5 - 2.0)


def test_insufficient_data():
    with pytest.raises(errors.InsufficientData):
        sw.fit_all_array(np.ones((1, 5)))
    with pytest.raises(errors.InsufficientData):
        sw.fit_all_array(np.ones((3, 1)))


def test_simplex_qp_ties_break_to_lowest_index():
    Q = np.ones((3, 3))
    sol = sw.simplex_qp(Q, np.ones(3))
    assert sol.non_unique
    np.testing.assert_array_equal(sol.w, [1.0, 0.0, 0.0])


def test_threaded_fit_matches_serial(rng):
    Y = rng.normal(size=(6, 30))
    a = sw.fit_all_array(Y)
    b = sw.fit_all_array(Y, n_jobs=3)
    np.testing.assert_array_equal(a.B, b.B)
    np.testing.assert_array_equal(a.intercepts, b.intercepts)


panels = st.tuples(st.integers(2, 6), st.integers(3, 30)).flatmap(
    lambda nt: arrays(np.float64, nt, elements=st.floats(-100, 100, allow_nan=False, width=64))
)


@given(panels)
@settings(max_examples=80, deadline=None)
def test_feasibility_and_kkt(Y):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        wm = sw.fit_all_array(Y)
    N, T = Y.shape
    B = wm.B
    assert np.all(np.diag(B) == 0)
    assert np.all(B >= -1e-10)
    np.testing.assert_allclose(B.sum(axis=1), 1.0, atol=1e-10)
    Yc = Y - Y.mean(axis=1, keepdims=True)
    scale = max(1.0, float(np.max(Yc * Yc)) * T)
    for i in range(N):
        r = Yc[i] - B[i] @ Yc
        g = -2 * Yc @ r  # gradient w.r.t. all weights
        g[i] = np.inf
        active = B[i] > 1e-9
        if not active.any():
            continue
        lam = g[active].mean()
        # stationarity on the support and no profitable donor outside it
        assert np.all(np.abs(g[active] - lam) <= 1e-6 * scale)
        assert np.all(g[~active] >= lam - 1e-6 * scale)


@given(panels, st.floats(-50, 50), st.integers(0, 5))
@settings(max_examples=50, deadline=None)
def test_shift_moves_only_the_intercept(Y, c, which):
    i = which % Y.shape[0]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        base = sw.fit_all_array(Y)
        Y2 = Y.copy()
        Y2[i] += c
        shifted = sw.fit_all_array(Y2)
    if base.fits[i].non_unique:
        return
    np.testing.assert_allclose(shifted.B[i], base.B[i], atol=1e-7)
    assert shifted.intercepts[i] == pytest.approx(base.intercepts[i] + c, abs=1e-6 * (1 + abs(c) + np.abs(Y).max()))
