import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fraccal.errors import DomainError, GridMismatchError, ParityError
from fraccal.fracop import assemble
from fraccal.forms import (
    DNDerivativeEvaluator,
    MFormEvaluator,
    Ordering,
    Potential,
    TestBattery,
    compare_mforms,
    make_battery,
    mform_dn,
    ordering_flags,
    testing_operator,
)
from fraccal.grid import build_grid, lp_norm
from fraccal.solver import build_lift

DEEP = dict(lambda0=1e-2, rho=0.01, levels=10)


def test_potential_validation(grid64):
    n = grid64.n_interior
    q = Potential(grid64, np.linspace(-2, 1, n), 3)
    assert q.bound == 2.0
    with pytest.raises(DomainError):
        Potential(grid64, np.zeros(n), 1)
    with pytest.raises(DomainError):
        Potential(grid64, np.zeros(n), 2.5)
    with pytest.raises(DomainError):
        Potential(grid64, np.full(n, np.nan), 2)
    with pytest.raises(GridMismatchError):
        Potential(grid64, np.zeros(n + 1), 2)


def test_zero_potential_form(lift64, rng):
    grid = lift64.grid
    q = Potential(grid, np.zeros(grid.n_interior), 2)
    g, h = rng.normal(size=(2, grid.n_exterior))
    assert mform_dn(lift64, q, g, h) == 0.0


def test_form_matches_explicit_sum(lift64, rng):
    grid = lift64.grid
    q = Potential(grid, rng.normal(size=grid.n_interior), 3)
    g, h = rng.normal(size=(2, grid.n_exterior))
    vg, vh = lift64.lift_matrix @ g, lift64.lift_matrix @ h
    expected = 6.0 * grid.h * np.sum(q.values * vg**3 * vh)
    assert mform_dn(lift64, q, g, h) == pytest.approx(expected, rel=1e-13)


def test_form_linear_in_potential(lift64, rng):
    grid = lift64.grid
    q1, q2 = rng.normal(size=(2, grid.n_interior))
    g, h = rng.normal(size=(2, grid.n_exterior))
    f = lambda q: mform_dn(lift64, Potential(grid, q, 2), g, h)
    assert f(q1 + q2) == pytest.approx(f(q1) + f(q2), rel=1e-12, abs=1e-14)


def test_grid_mismatch(lift64):
    other = build_grid(0.0, 1.0, 0.5, 32)
    q = Potential(other, np.zeros(other.n_interior), 2)
    with pytest.raises(GridMismatchError):
        mform_dn(lift64, q, np.zeros(lift64.grid.n_exterior), np.zeros(lift64.grid.n_exterior))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([3, 5]))
def test_nonnegative_potential_odd_diagonal(small_lift, seed, m):
    r = np.random.default_rng(seed)
    grid = small_lift.grid
    q = Potential(grid, r.exponential(size=grid.n_interior), m)
    g = r.normal(size=grid.n_exterior)
    assert mform_dn(small_lift, q, g, g) >= 0


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([2, 4]))
def test_positivity_chain_even(small_lift, seed, m):
    r = np.random.default_rng(seed)
    grid = small_lift.grid
    g = r.normal(size=grid.n_exterior)
    h = r.exponential(size=grid.n_exterior) * (r.random(grid.n_exterior) < 0.3)
    h[r.integers(grid.n_exterior)] = 1.0
    assert np.all(small_lift.lift(h) > 0)
    cells = grid.interior_idx[r.random(grid.n_interior) < 0.5]
    assert testing_operator(small_lift, cells, m, g, h) >= 0
    q = Potential(grid, r.exponential(size=grid.n_interior), m)
    assert mform_dn(small_lift, q, g, h) >= 0


def test_testing_operator_edge_cases(lift64, rng):
    grid = lift64.grid
    g, h = rng.normal(size=(2, grid.n_exterior))
    assert testing_operator(lift64, [], 3, g, h) == 0.0
    full = testing_operator(lift64, grid.interior_idx, 3, g, h)
    ones = Potential(grid, np.ones(grid.n_interior), 3)
    assert full == pytest.approx(mform_dn(lift64, ones, g, h) / 6.0, rel=1e-14)
    with pytest.raises(IndexError):
        testing_operator(lift64, [0], 3, g, h)


def test_battery_values_match_pointwise_forms(lift64, rng):
    grid = lift64.grid
    for m in (2, 3):
        battery = make_battery(lift64, 5, m, seed=3, h_count=4)
        q = Potential(grid, rng.normal(size=grid.n_interior), m)
        ev = MFormEvaluator.dn(lift64, q)
        direct = [mform_dn(lift64, q, *battery.pair_data(p)) for p in battery.pairs()]
        np.testing.assert_allclose(ev.values(battery), direct, rtol=1e-12, atol=1e-15)
        assert len(battery) == (5 if m % 2 else 20)


def test_battery_determinism_and_normalization(lift64):
    b1 = make_battery(lift64, 8, 2, seed=11, include_localized=[[lift64.grid.interior_idx[3]]])
    b2 = make_battery(lift64, 8, 2, seed=11, include_localized=[[lift64.grid.interior_idx[3]]])
    assert np.array_equal(b1.g_list, b2.g_list) and np.array_equal(b1.h_list, b2.h_list)
    grid = lift64.grid
    for row in np.concatenate([b1.g_list, b1.h_list]):
        assert lp_norm(grid, row) == pytest.approx(1.0, rel=1e-12)
    assert np.all(b1.h_list >= 0) and np.all(b1.h_list.max(axis=1) > 0)
    assert b1.labels_g.count("random") == 8 and len(b1.labels_g) == 8 + 5
    b3 = make_battery(lift64, 8, 2, seed=12)
    assert not np.array_equal(b1.g_list[:8], b3.g_list)


def test_battery_rejects_zero_count(lift64):
    with pytest.raises(DomainError):
        make_battery(lift64, 0, 2, seed=0)


def test_equal_evaluators_tie_break_ge(lift64, rng):
    grid = lift64.grid
    q = Potential(grid, rng.normal(size=grid.n_interior), 3)
    battery = make_battery(lift64, 10, 3, seed=1)
    e1, e2 = MFormEvaluator.dn(lift64, q), MFormEvaluator.dn(lift64, q)
    ge, le, _ = ordering_flags(e1, e2, battery)
    assert ge and le
    assert compare_mforms(e1, e2, battery) is Ordering.GE


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([2, 3, 4]))
def test_pointwise_order_gives_ge(small_lift, seed, m):
    r = np.random.default_rng(seed)
    grid = small_lift.grid
    q2 = r.normal(size=grid.n_interior)
    q1 = q2 + r.exponential(size=grid.n_interior) * (r.random(grid.n_interior) < 0.5)
    battery = make_battery(small_lift, 6, m, seed=seed % 1000, h_count=3)
    e1 = MFormEvaluator.dn(small_lift, Potential(grid, q1, m))
    e2 = MFormEvaluator.dn(small_lift, Potential(grid, q2, m))
    assert compare_mforms(e1, e2, battery) is Ordering.GE
    assert compare_mforms(e2, e1, battery) in (Ordering.LE, Ordering.GE)


def test_sign_changing_difference_incomparable(lift64):
    grid = lift64.grid
    n = grid.n_interior
    d = np.where(np.arange(n) < n // 2, 1.0, -1.0)
    cells = [[c] for c in grid.interior_idx]
    battery = make_battery(lift64, 10, 3, seed=4, include_localized=cells, localize_options=DEEP)
    zero = MFormEvaluator.dn(lift64, Potential(grid, np.zeros(n), 3))
    diff = MFormEvaluator.dn(lift64, Potential(grid, d, 3))
    assert compare_mforms(diff, zero, battery) is Ordering.INCOMPARABLE


def test_parity_violation(lift64):
    grid = lift64.grid
    battery = make_battery(lift64, 4, 2, seed=0)
    bad = TestBattery(battery.g_list, -battery.h_list, 0, 2)
    e = MFormEvaluator(lift64, np.ones(grid.n_interior), 2)
    with pytest.raises(ParityError):
        compare_mforms(e, e, bad)


def test_localized_data_catch_what_random_misses(lift64):
    # q1 - q2 = chi_M - c chi_rest with c tuned so every random pair sees LE;
    # localized data on M still expose the positive part.
    grid = lift64.grid
    n, m = grid.n_interior, 3
    M = grid.interior_idx[:4]
    onM = np.isin(grid.interior_idx, M)
    target = make_battery(lift64, 3, m, seed=5, include_localized=[M], localize_options=DEEP)
    size = len(target.g_list)
    plain = make_battery(lift64, size, m, seed=5)
    K = plain.kernel(lift64)
    c = 2.0 * np.max(K[:, onM].sum(axis=1) / K[:, ~onM].sum(axis=1))
    d = np.where(onM, 1.0, -c)
    diff = MFormEvaluator(lift64, d, m, 6.0)
    zero = MFormEvaluator(lift64, np.zeros(n), m, 6.0)
    assert compare_mforms(diff, zero, plain) is Ordering.LE
    assert compare_mforms(diff, zero, target) is Ordering.INCOMPARABLE


def test_dn_derivative_evaluator_agrees(lift64, rng):
    grid = lift64.grid
    q = Potential(grid, rng.uniform(-1, 1, grid.n_interior), 2)
    battery = make_battery(lift64, 3, 2, seed=9, h_count=2)
    exact = MFormEvaluator.dn(lift64, q).values(battery)
    measured = DNDerivativeEvaluator(lift64, q).values(battery)
    assert np.all(np.abs(measured - exact) <= np.maximum(1e-6, 1e-4 * np.abs(exact)))


def test_evaluator_battery_m_mismatch(lift64):
    e = MFormEvaluator(lift64, np.ones(lift64.grid.n_interior), 3)
    with pytest.raises(DomainError):
        e.values(make_battery(lift64, 2, 2, seed=0))
