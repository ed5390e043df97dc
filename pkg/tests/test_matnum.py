import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stealthlab.errors import DimensionMismatch, NonConvergence, NotSymmetric
from stealthlab.matnum import (
    SolverOptions,
    chol_factor,
    dare_residual,
    pseudoinverse,
    psd_project,
    solve_dare,
    solve_dlyap,
)

GOLDEN_RATIO = (1 + np.sqrt(5)) / 2
seeds = st.integers(min_value=0, max_value=2**32 - 1)


def test_dare_scalar_golden_ratio():
    X = solve_dare([[1.0]], [[1.0]], [[1.0]], [[1.0]])
    assert X[0, 0] == pytest.approx(GOLDEN_RATIO, abs=1e-10)


def test_dare_zero_dynamics_returns_process_noise():
    Q = np.array([[2.0, 0.3], [0.3, 1.0]])
    X = solve_dare(np.zeros((2, 2)), np.array([[1.0, -1.0]]), Q, np.eye(1))
    np.testing.assert_allclose(X, Q, atol=1e-12)


def test_dare_example1_matches_golden(ex1, gold1):
    X = solve_dare(ex1.A, ex1.C, ex1.Sigma_w, ex1.Sigma_v)
    np.testing.assert_allclose(X, gold1["P"], rtol=1e-8, atol=1e-9)
    assert dare_residual(X, ex1.A, ex1.C, ex1.Sigma_w, ex1.Sigma_v) < 1e-10


def test_dare_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        solve_dare(np.eye(2), np.ones((1, 3)), np.eye(2), np.eye(1))


def test_dare_reports_non_convergence():
    # (F, H) with an unobservable unstable mode has no stabilizing fixed point.
    F = np.diag([2.0, 0.5])
    H = np.array([[0.0, 1.0]])
    with pytest.raises(NonConvergence):
        solve_dare(F, H, np.eye(2), np.eye(1), SolverOptions(max_iterations=500))


@settings(max_examples=25, deadline=None)
@given(seeds)
def test_dare_random_fixed_point(seed):
    rng = np.random.default_rng(seed)
    n, m = rng.integers(1, 5), rng.integers(1, 4)
    F = rng.normal(size=(n, n))
    H = rng.normal(size=(m, n))
    G = rng.normal(size=(n, n))
    Q = G @ G.T + 0.1 * np.eye(n)
    R = np.eye(m)
    X = solve_dare(F, H, Q, R)
    np.testing.assert_allclose(X, X.T)
    assert np.linalg.eigvalsh(X).min() > -1e-9
    assert dare_residual(X, F, H, Q, R) <= 1e-9


def test_dlyap_examples():
    Q0 = np.array([[1.0, 0.2], [0.2, 3.0]])
    np.testing.assert_allclose(solve_dlyap(np.zeros((2, 2)), Q0), Q0)
    assert solve_dlyap([[0.5]], [[1.0]])[0, 0] == pytest.approx(4 / 3, rel=1e-9)
    with pytest.raises(NonConvergence):
        solve_dlyap([[1.1]], [[1.0]])


@settings(max_examples=25, deadline=None)
@given(seeds)
def test_dlyap_matches_truncated_series(seed):
    rng = np.random.default_rng(seed)
    n = rng.integers(1, 5)
    F = rng.normal(size=(n, n))
    F *= 0.9 / max(1e-3, np.abs(np.linalg.eigvals(F)).max())
    G = rng.normal(size=(n, n))
    Q = G @ G.T
    X = solve_dlyap(F, Q, SolverOptions(tolerance=1e-13, max_iterations=100000))
    series = np.zeros((n, n))
    term = Q.copy()
    while np.linalg.norm(term) > 1e-14 * max(1.0, np.linalg.norm(series)):
        series += term
        term = F @ term @ F.T
    np.testing.assert_allclose(X, series, rtol=1e-8, atol=1e-9)


def test_pseudoinverse_examples():
    np.testing.assert_array_equal(pseudoinverse(np.eye(3)), np.eye(3))
    np.testing.assert_array_equal(pseudoinverse(np.zeros((2, 3))), np.zeros((3, 2)))
    M = np.array([[1.0, 0.0], [0.0, 0.0]])
    P = pseudoinverse(M)
    np.testing.assert_allclose(M @ P @ M, M)
    np.testing.assert_allclose(P @ M @ P, P)


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_pseudoinverse_penrose_identities(seed):
    rng = np.random.default_rng(seed)
    r, c = rng.integers(1, 6, size=2)
    k = rng.integers(1, min(r, c) + 1)
    M = rng.normal(size=(r, k)) @ rng.normal(size=(k, c))
    P = pseudoinverse(M)
    np.testing.assert_allclose(M @ P @ M, M, atol=1e-9)
    np.testing.assert_allclose(P @ M @ P, P, atol=1e-9)
    np.testing.assert_allclose((M @ P).T, M @ P, atol=1e-9)
    np.testing.assert_allclose((P @ M).T, P @ M, atol=1e-9)


def test_psd_project_examples():
    S = np.array([[2.0, 0.5], [0.5, 1.0]])
    np.testing.assert_allclose(psd_project(S), S, atol=1e-9)
    np.testing.assert_allclose(psd_project(np.diag([1.0, -2.0])), np.diag([1.0, 0.0]), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_psd_project_nearest_among_clamped_candidates(seed):
    rng = np.random.default_rng(seed)
    G = rng.normal(size=(2, 2))
    M = G + G.T
    lam, V = np.linalg.eigh(M)
    P = psd_project(M)
    assert np.linalg.eigvalsh(P).min() >= -1e-12
    np.testing.assert_allclose(psd_project(P), P, atol=1e-12)
    best = np.inf
    for keep in np.ndindex(2, 2):
        cand_lam = np.where(np.array(keep, bool), lam, 0.0)
        if (cand_lam < 0).any():
            continue
        best = min(best, np.linalg.norm(M - (V * cand_lam) @ V.T))
    assert np.linalg.norm(M - P) <= best + 1e-12


def test_chol_factor_examples(kd1):
    np.testing.assert_array_equal(chol_factor(np.eye(3)), np.eye(3))
    np.testing.assert_allclose(chol_factor(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]))
    G = chol_factor(kd1.Sigma_z)
    assert np.linalg.norm(G @ G.T - kd1.Sigma_z) < 1e-9


def test_chol_factor_singular_and_asymmetric():
    v = np.array([[1.0], [2.0], [-1.0]])
    S = v @ v.T
    G = chol_factor(S)
    np.testing.assert_allclose(np.triu(G, 1), 0.0)
    np.testing.assert_allclose(G @ G.T, S, atol=1e-9)
    np.testing.assert_array_equal(chol_factor(np.zeros((2, 2))), np.zeros((2, 2)))
    with pytest.raises(NotSymmetric):
        chol_factor(np.array([[1.0, 0.5], [0.0, 1.0]]))


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_chol_factor_roundtrip(seed):
    rng = np.random.default_rng(seed)
    n = rng.integers(1, 6)
    k = rng.integers(1, n + 1)
    G0 = rng.normal(size=(n, k))
    S = G0 @ G0.T
    G = chol_factor(S)
    np.testing.assert_allclose(G @ G.T, S, atol=1e-9)
    np.testing.assert_allclose(np.triu(G, 1), 0.0)


def test_solver_options_validation():
    with pytest.raises(ValueError):
        SolverOptions(tolerance=0.0)
    with pytest.raises(ValueError):
        SolverOptions(max_iterations=0)
