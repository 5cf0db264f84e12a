import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.linalg import solve_triangular
from scipy.optimize import nnls

from gaussrisk.errors import DimensionMismatch, NoPositiveComponent, NotPositiveDefinite
from gaussrisk.linalg import correlation_from_gram, trivariate
from gaussrisk.qp import (
    qualifying_subsets,
    savage_condition,
    solve_pi,
    trivariate_savage_margin,
    verify_kkt,
)


def nnls_oracle(sigma, c):
    """Independent solution through the dual NNLS problem."""
    f = np.linalg.cholesky(sigma)
    nu, _ = nnls(f.T, solve_triangular(f, c, lower=True))
    return sigma @ nu, nu


def random_instance(seed, d=None):
    rng = np.random.default_rng(seed)
    d = d or int(rng.integers(2, 7))
    sigma = correlation_from_gram(rng, d)
    c = rng.uniform(-1.0, 2.0, d)
    if not np.any(c > 0):
        c[rng.integers(d)] = rng.uniform(0.1, 2.0)
    return sigma, c


@pytest.mark.parametrize(
    "c2, I, L, min_value",
    [(0.7, (1, 2), (1, 2), None), (0.5, (1,), (1, 2), 1.0), (0.2, (1,), (1,), 1.0)],
)
def test_bivariate_illustration(c2, I, L, min_value):
    sol = solve_pi([[1.0, 0.5], [0.5, 1.0]], [1.0, c2])
    assert (sol.I, sol.L) == (I, L)
    if min_value is not None:
        assert sol.min_value == pytest.approx(min_value)
    if c2 == 0.2:
        assert np.allclose(sol.c_tilde, [1.0, 0.5])
        assert sol.h == {1: pytest.approx(1.0)}


@given(st.integers(0, 2**32 - 1))
def test_matches_dual_nnls_oracle(seed):
    sigma, c = random_instance(seed)
    sol = solve_pi(sigma, c)
    c_tilde, nu = nnls_oracle(sigma, c)
    assert np.allclose(sol.c_tilde, c_tilde, atol=1e-9)
    assert sol.min_value == pytest.approx(c_tilde @ nu, rel=1e-9)
    assert set(sol.I) == {i + 1 for i in np.flatnonzero(nu > 1e-10)}


@given(st.integers(0, 2**32 - 1))
def test_unique_subset_and_methods_agree(seed):
    sigma, c = random_instance(seed)
    assert len(qualifying_subsets(sigma, c)) == 1
    a = solve_pi(sigma, c, method="enumeration")
    b = solve_pi(sigma, c, method="active-set")
    assert a.I == b.I and a.L == b.L
    assert np.allclose(a.c_tilde, b.c_tilde, atol=1e-12)


@given(st.integers(0, 2**32 - 1))
def test_kkt_and_feasible_points(seed):
    sigma, c = random_instance(seed)
    sol = solve_pi(sigma, c)
    assert verify_kkt(sigma, c, sol).passed
    rng = np.random.default_rng(seed)
    x = c + rng.exponential(1.0, (200, len(c)))
    values = np.einsum("ij,ij->i", x, np.linalg.solve(sigma, x.T).T)
    assert sol.min_value <= values.min() + 1e-12


@given(st.integers(0, 2**32 - 1))
def test_savage_iff_full_index_set(seed):
    sigma, c = random_instance(seed)
    assert savage_condition(sigma, c) == (solve_pi(sigma, c).m == len(c))


@pytest.mark.parametrize("d", [13, 20, 30])
def test_active_set_large_dimension(d):
    sigma, c = random_instance(d, d)
    sol = solve_pi(sigma, c)
    assert sol.method == "active-set"
    assert np.allclose(sol.c_tilde, nnls_oracle(sigma, c)[0], atol=1e-9)
    assert verify_kkt(sigma, c, sol, max_index_sets=64).passed


def test_trivariate_margin_classifies():
    ones = np.ones(3)
    inside = trivariate(0.3, 0.2, 0.4)
    assert trivariate_savage_margin(inside) > 0 and solve_pi(inside, ones).I == (1, 2, 3)
    outside = trivariate(0.9, 0.9, 0.7)
    assert trivariate_savage_margin(outside) < 0
    sol = solve_pi(outside, ones)
    assert sol.I == (2, 3) and sol.L == (2, 3)
    assert sol.c_tilde[0] == pytest.approx(1.8 / 1.7)


def test_boundary_instance():
    sigma = trivariate(0.9, 0.9, 0.8)
    assert trivariate_savage_margin(sigma) == pytest.approx(0.0, abs=1e-15)
    for method in ("enumeration", "active-set"):
        sol = solve_pi(sigma, np.ones(3), method=method)
        assert (sol.I, sol.L) == ((2, 3), (1, 2, 3))
        assert sol.regime_of(1) == "InLMinusI"


def test_kkt_c_form_fails_only_with_dropped_coordinates():
    sigma = trivariate(0.9, 0.9, 0.7)
    sol = solve_pi(sigma, np.ones(3))
    rep = verify_kkt(sigma, np.ones(3), sol)
    assert rep.passed and rep.c_form_failures > 0
    sigma = trivariate(0.3, 0.2, 0.4)
    rep = verify_kkt(sigma, np.ones(3), solve_pi(sigma, np.ones(3)))
    assert rep.passed and rep.c_form_failures == 0


def test_kkt_detects_wrong_solution():
    sigma = trivariate(0.9, 0.9, 0.7)
    from gaussrisk.qp import build_solution

    wrong = build_solution(sigma, np.ones(3), (1, 2, 3))
    assert not verify_kkt(sigma, np.ones(3), wrong).passed


def test_errors():
    with pytest.raises(NoPositiveComponent):
        solve_pi(np.eye(2), [-1.0, 0.0])
    with pytest.raises(DimensionMismatch):
        solve_pi(np.eye(3), [1.0, 1.0])
    with pytest.raises(NotPositiveDefinite):
        solve_pi([[1.0, 1.0], [1.0, 1.0]], [1.0, 1.0])
