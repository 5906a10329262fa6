import itertools
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog

from gflownet_ot.ot import (ConvergenceWarning, DiscreteMeasure, diagonal_ot, diagonal_plan, exact_ot,
                            sinkhorn)


def lp_value(alpha, beta, cost):
    k, l = cost.shape
    a_eq = np.zeros((k + l, k * l))
    for i in range(k):
        a_eq[i, i * l:(i + 1) * l] = 1
    for j in range(l):
        a_eq[k + j, j::l] = 1
    res = linprog(cost.ravel(), A_eq=a_eq, b_eq=np.r_[alpha, beta], bounds=(0, None), method="highs")
    assert res.status == 0
    return res.fun


def vertex_value(alpha, beta, cost):
    """Minimum over all basic feasible solutions (k + l - 1 basic cells)."""
    k, l = cost.shape
    a_eq = np.zeros((k + l, k * l))
    for i in range(k):
        a_eq[i, i * l:(i + 1) * l] = 1
    for j in range(l):
        a_eq[k + j, j::l] = 1
    b = np.r_[alpha, beta]
    best = np.inf
    for basis in itertools.combinations(range(k * l), k + l - 1):
        sub = a_eq[:, basis]
        if np.linalg.matrix_rank(sub) < k + l - 1:
            continue
        x, *_ = np.linalg.lstsq(sub, b, rcond=None)
        if (x < -1e-12).any() or np.abs(sub @ x - b).max() > 1e-10:
            continue
        best = min(best, float(cost.ravel()[list(basis)] @ x))
    return best


def rand_simplex(rng, n, zeros=False):
    w = rng.random(n)
    if zeros and n > 1:
        w[rng.random(n) < 0.3] = 0
        if w.sum() == 0:
            w[0] = 1
    return w / w.sum()


def test_two_point_example():
    value, plan = exact_ot([0.5, 0.5], [0.3, 0.7], [[0, 1], [1, 0]])
    assert value == pytest.approx(0.2, abs=1e-15)
    assert vertex_value(np.array([.5, .5]), np.array([.3, .7]), np.array([[0., 1], [1, 0]])) == pytest.approx(0.2)
    np.testing.assert_allclose(plan.matrix, [[0.3, 0.2], [0.0, 0.5]], atol=1e-15)


def test_diagonal_example():
    assert diagonal_ot([0.5, 0.5], [0.3, 0.7], [-1.0, -2.0]) == pytest.approx(-1.3, abs=1e-15)
    assert exact_ot([0.5, 0.5], [0.3, 0.7], np.diag([-1.0, -2.0]))[0] == pytest.approx(-1.3, abs=1e-15)


def test_exact_matches_vertex_enumeration():
    rng = np.random.default_rng(0)
    for _ in range(60):
        k, l = rng.integers(1, 4, size=2)
        a, b = rand_simplex(rng, k, True), rand_simplex(rng, l, True)
        c = rng.normal(size=(k, l))
        assert exact_ot(a, b, c)[0] == pytest.approx(vertex_value(a, b, c), abs=1e-10)


def test_exact_matches_linprog():
    rng = np.random.default_rng(1)
    for _ in range(300):
        k, l = rng.integers(1, 9, size=2)
        a, b = rand_simplex(rng, k, True), rand_simplex(rng, l, True)
        c = np.round(rng.normal(size=(k, l)), rng.integers(0, 3))  # ties exercise degeneracy
        value, plan = exact_ot(a, b, c)
        assert value == pytest.approx(lp_value(a, b, c), abs=1e-9)
        assert plan.marginal_violation(a, b) <= 1e-12
        assert (plan.matrix >= 0).all()


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(1, 8))
def test_diagonal_closed_form(seed, n):
    rng = np.random.default_rng(seed)
    a, b = rand_simplex(rng, n, True), rand_simplex(rng, n, True)
    c = -rng.exponential(size=n)
    c[rng.random(n) < 0.2] = 0.0
    cost = np.diag(c)
    closed = diagonal_ot(a, b, c)
    assert closed == pytest.approx(exact_ot(a, b, cost)[0], abs=1e-9)
    assert closed == pytest.approx(lp_value(a, b, cost), abs=1e-9)
    plan = diagonal_plan(a, b)
    np.testing.assert_allclose(plan.sum(axis=1), a, atol=1e-12)
    np.testing.assert_allclose(plan.sum(axis=0), b, atol=1e-12)
    assert (plan * cost).sum() == pytest.approx(closed, abs=1e-12)


def test_diagonal_rejects_positive_cost():
    with pytest.raises(ValueError):
        diagonal_ot([1.0], [1.0], [0.5])


def test_sinkhorn_close_to_exact_at_small_epsilon():
    rng = np.random.default_rng(2)
    for _ in range(10):
        a, b = rand_simplex(rng, 5), rand_simplex(rng, 5)
        c = rng.random((5, 5))
        value, plan = sinkhorn(a, b, c, epsilon=1e-3, max_iters=100_000)
        assert plan.converged
        assert plan.marginal_violation(a, b) <= 1e-6
        assert abs(value - exact_ot(a, b, c)[0]) <= 1e-2


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31), k=st.integers(1, 6), l=st.integers(1, 6))
def test_entropic_cost_is_never_below_exact(seed, k, l):
    rng = np.random.default_rng(seed)
    a, b = rand_simplex(rng, k), rand_simplex(rng, l)
    c = rng.normal(size=(k, l))
    value, plan = sinkhorn(a, b, c, epsilon=0.1, max_iters=5000, tol=1e-10)
    # the plan is feasible up to its residual, so its cost bounds the optimum up to that slack
    slack = plan.residual * np.abs(c).max()
    assert value >= exact_ot(a, b, c)[0] - slack - 1e-12


def test_entropic_gap_shrinks_with_epsilon():
    rng = np.random.default_rng(4)
    a, b = rand_simplex(rng, 4), rand_simplex(rng, 4)
    c = rng.random((4, 4))
    exact = exact_ot(a, b, c)[0]
    gaps = [sinkhorn(a, b, c, epsilon=e, max_iters=50_000, tol=1e-12)[0] - exact for e in (1.0, 0.3, 0.1, 0.03)]
    assert all(g1 >= g2 - 1e-10 for g1, g2 in zip(gaps, gaps[1:]))


def test_sinkhorn_warns_when_out_of_iterations():
    rng = np.random.default_rng(5)
    a, b = rand_simplex(rng, 5), rand_simplex(rng, 5)
    with pytest.warns(ConvergenceWarning):
        _, plan = sinkhorn(a, b, rng.random((5, 5)), epsilon=1e-3, max_iters=2)
    assert not plan.converged and plan.residual > 1e-6


def test_sinkhorn_converges_quietly_at_default_settings():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        _, plan = sinkhorn([0.5, 0.5], [0.5, 0.5], [[0.0, 1.0], [1.0, 0.0]])
    assert plan.converged


@pytest.mark.parametrize("alpha,beta,cost", [
    ([0.5, 0.6], [1.0], [[0.0], [0.0]]),
    ([-0.5, 1.5], [1.0], [[0.0], [0.0]]),
    ([1.0], [1.0], [[0.0, 1.0]]),
    ([1.0], [1.0], [[np.nan]]),
])
def test_invalid_problems(alpha, beta, cost):
    with pytest.raises(ValueError):
        exact_ot(alpha, beta, cost)
    with pytest.raises(ValueError):
        sinkhorn(alpha, beta, cost)


def test_exact_size_guard():
    a = np.full(65, 1 / 65)
    with pytest.raises(ValueError):
        exact_ot(a, a, np.zeros((65, 65)))


def test_discrete_measure():
    m = DiscreteMeasure([0.25, 0.75])
    assert m.labels == [0, 1]
    with pytest.raises(ValueError):
        DiscreteMeasure([0.5, 0.6])
