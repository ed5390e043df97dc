"""Steady-state Kalman filter design and the one-step filter update."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch
from .matnum import DEFAULT_OPTIONS, SolverOptions, solve_dare, symmetrize
from .model import StateSpaceModel


@dataclass(frozen=True, eq=False)
class KalmanDesign:
    """Steady-state predictor gain and the covariances derived from it.

    ``W = C' Sigma_z^{-1} C`` weights estimation errors by how well each output
    direction was predicted without attack; ``baseline_mse = tr(P W)``.
    """

    K: np.ndarray
    P: np.ndarray
    Sigma_z: np.ndarray
    W: np.ndarray
    baseline_mse: float

    @property
    def n_y(self) -> int:
        return self.Sigma_z.shape[0]


@dataclass(frozen=True)
class FilterState:
    x_hat: np.ndarray
    k: int = 1


def design(m: StateSpaceModel, opts: SolverOptions = DEFAULT_OPTIONS) -> KalmanDesign:
    """Steady-state Kalman predictor for ``m``.

    Raises
    ------
    NonConvergence
        Propagated from the Riccati solver.
    """
    P = solve_dare(m.A, m.C, m.Sigma_w, m.Sigma_v, opts)
    Sigma_z = symmetrize(m.C @ P @ m.C.T + m.Sigma_v)
    Sz_inv_C = np.linalg.solve(Sigma_z, m.C)
    K = m.A @ P @ Sz_inv_C.T
    W = symmetrize(m.C.T @ Sz_inv_C)
    return KalmanDesign(K=K, P=P, Sigma_z=Sigma_z, W=W, baseline_mse=float(np.trace(P @ W)))


def error_dynamics(m: StateSpaceModel, d: KalmanDesign) -> np.ndarray:
    """``A - K C``, the estimation-error transition matrix."""
    return m.A - d.K @ m.C


def filter_step(d: KalmanDesign, m: StateSpaceModel, s: FilterState, y, u):
    """Advance the predictor one step; returns ``(new_state, innovation)``."""
    y = np.asarray(y, dtype=float)
    u = np.asarray(u, dtype=float)
    x_hat = np.asarray(s.x_hat, dtype=float)
    if y.shape != (m.n_y,) or u.shape != (m.n_u,) or x_hat.shape != (m.n_x,):
        raise DimensionMismatch(
            f"filter_step expects y:{(m.n_y,)}, u:{(m.n_u,)}, x_hat:{(m.n_x,)}; "
            f"got {y.shape}, {u.shape}, {x_hat.shape}"
        )
    z = y - m.C @ x_hat
    x_next = m.A @ x_hat + d.K @ z + m.B @ u
    return FilterState(x_hat=x_next, k=s.k + 1), z


def innovation_covariance_identity(d: KalmanDesign, m: StateSpaceModel) -> float:
    """``||Sigma_z - C P C' - Sigma_v||``; a self-check that should be ~0."""
    return float(np.linalg.norm(d.Sigma_z - m.C @ d.P @ m.C.T - m.Sigma_v))
