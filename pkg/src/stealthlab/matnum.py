"""Dense matrix numerics: Riccati and Lyapunov fixed points, pseudoinverse,
PSD projection and covariance square roots.

The Riccati solver deliberately iterates the covariance recursion instead of
calling a Schur-based solver: the iteration is the Kalman recursion itself and
its convergence doubles as the detectability check.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NonConvergence, NotSymmetric

RANK_RTOL = 1e-8


@dataclass(frozen=True)
class SolverOptions:
    tolerance: float = 1e-10
    max_iterations: int = 10000

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")


DEFAULT_OPTIONS = SolverOptions()


def as_matrix(M, name="matrix", shape=None) -> np.ndarray:
    """Coerce to a finite 2-D float array, optionally checking the shape."""
    arr = np.asarray(M, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim != 2:
        raise DimensionMismatch(f"{name} must be 2-D, got shape {arr.shape}")
    if shape is not None:
        for got, want in zip(arr.shape, shape):
            if want is not None and got != want:
                raise DimensionMismatch(f"{name} has shape {arr.shape}, expected {shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    return arr


def symmetrize(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


def _norm(M):
    return np.linalg.norm(M, 2) if M.size else 0.0


def riccati_map(X, F, H, Q, R):
    """One step of ``X -> F X F' - F X H'(H X H' + R)^{-1} H X F' + Q``."""
    XHt = X @ H.T
    G = H @ XHt + R
    X_post = X - XHt @ np.linalg.solve(G, XHt.T)
    return symmetrize(F @ X_post @ F.T + Q)


def dare_residual(X, F, H, Q, R) -> float:
    """Relative residual ``||X - riccati_map(X)|| / max(1, ||X||)``."""
    return _norm(X - riccati_map(X, F, H, Q, R)) / max(1.0, _norm(X))


def solve_dare(F, H, Q, R, opts: SolverOptions = DEFAULT_OPTIONS) -> np.ndarray:
    """Solve the filtering-form discrete algebraic Riccati equation.

    Finds the symmetric PSD ``X`` with

        X = F X F' - F X H' (H X H' + R)^{-1} H X F' + Q

    by iterating the map from ``X0 = Q``.

    Parameters
    ----------
    F : (N, N) array_like
    H : (M, N) array_like
    Q : (N, N) array_like, PSD
    R : (M, M) array_like, PD
    opts : SolverOptions

    Returns
    -------
    X : (N, N) ndarray
        Fixed point whose relative residual is at most ``opts.tolerance``.

    Raises
    ------
    NonConvergence
        If the iteration diverges or runs out of iterations.
    DimensionMismatch
    """
    F = as_matrix(F, "F")
    n = F.shape[0]
    F = as_matrix(F, "F", (n, n))
    H = as_matrix(H, "H", (None, n))
    m = H.shape[0]
    Q = symmetrize(as_matrix(Q, "Q", (n, n)))
    R = symmetrize(as_matrix(R, "R", (m, m)))

    X = Q.copy()
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(opts.max_iterations):
            X_next = riccati_map(X, F, H, Q, R)
            if not np.all(np.isfinite(X_next)):
                break
            if _norm(X_next - X) / max(1.0, _norm(X)) <= opts.tolerance:
                return X
            X = X_next
    raise NonConvergence(
        f"Riccati iteration did not reach relative residual {opts.tolerance:g} "
        f"within {opts.max_iterations} iterations"
    )


def solve_dlyap(F, Q, opts: SolverOptions = DEFAULT_OPTIONS) -> np.ndarray:
    """Solve ``X = F X F' + Q`` by fixed-point iteration.

    Non-convergence means the spectral radius of ``F`` is not below one.
    """
    F = as_matrix(F, "F")
    n = F.shape[0]
    F = as_matrix(F, "F", (n, n))
    Q = symmetrize(as_matrix(Q, "Q", (n, n)))

    X = Q.copy()
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(opts.max_iterations):
            X_next = symmetrize(F @ X @ F.T + Q)
            if not np.all(np.isfinite(X_next)):
                break
            if _norm(X_next - X) / max(1.0, _norm(X)) <= opts.tolerance:
                return X
            X = X_next
    raise NonConvergence("Lyapunov iteration diverged; spectral radius of F is likely >= 1")


def pseudoinverse(M) -> np.ndarray:
    """Moore-Penrose pseudoinverse (numpy's SVD-based ``pinv``)."""
    return np.linalg.pinv(as_matrix(M))


def psd_project(M) -> np.ndarray:
    """Symmetrize, then zero the negative eigenvalues keeping the eigenvectors."""
    S = symmetrize(as_matrix(M))
    lam, V = np.linalg.eigh(S)
    return symmetrize((V * np.clip(lam, 0.0, None)) @ V.T)


def chol_factor(Sigma, atol=1e-9) -> np.ndarray:
    """Lower-triangular ``G`` with ``G G' = Sigma`` for symmetric PSD ``Sigma``.

    Positive definite input goes through Cholesky. Singular input gets an
    eigendecomposition square root, re-triangularized with a QR step.
    """
    S = as_matrix(Sigma, "Sigma")
    if S.shape[0] != S.shape[1]:
        raise DimensionMismatch(f"covariance must be square, got {S.shape}")
    scale = max(1.0, np.abs(S).max(initial=0.0))
    if np.abs(S - S.T).max(initial=0.0) > atol * scale:
        raise NotSymmetric("covariance matrix is not symmetric")
    S = symmetrize(S)
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        pass
    lam, V = np.linalg.eigh(S)
    root = V * np.sqrt(np.clip(lam, 0.0, None))
    # root root' = S; QR of root' gives root' = Q R so S = R' R.
    _, Rf = np.linalg.qr(root.T)
    G = Rf.T
    signs = np.where(np.diag(G) < 0, -1.0, 1.0)
    return G * signs


def matrix_rank(M, rtol=RANK_RTOL) -> int:
    """Rank with a singular-value cutoff relative to the largest one."""
    M = np.asarray(M)
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    if s[0] == 0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def spectral_radius(F) -> float:
    F = np.asarray(F)
    if F.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(F))))
