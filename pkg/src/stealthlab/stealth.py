"""KL-divergence calculus for innovation sequences.

Everything is in nats. The central object is ``delta_bar``, which maps a
per-output divergence budget to the largest admissible inflation of the
innovation covariance.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .errors import InsufficientSamples, SingularCovariance
from .kalman import KalmanDesign
from .matnum import as_matrix, symmetrize


def delta_bar(gamma: float) -> float:
    """Root ``x >= 1`` of ``x = 2 gamma + 1 + ln x``.

    ``gamma = 0`` returns exactly 1. Otherwise the root is bracketed by
    ``[1, 2 gamma + 2 + max(0, ln(2 gamma + 2))]`` and found by bisection.
    """
    gamma = float(gamma)
    if not gamma >= 0:
        raise ValueError(f"gamma must be non-negative, got {gamma}")
    if gamma == 0:
        return 1.0
    c = 2.0 * gamma + 1.0
    hi = c + 1.0 + max(0.0, np.log(c + 1.0))
    return optimize.bisect(lambda x: x - c - np.log(x), 1.0, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=400)


def delta_bar_slope(gamma: float) -> float:
    """Derivative of ``delta_bar``, ``2 / (1 - 1/delta_bar)``, from implicit differentiation."""
    x = delta_bar(gamma)
    return np.inf if x == 1.0 else 2.0 / (1.0 - 1.0 / x)


@dataclass(frozen=True)
class ConverseResult:
    bound: float
    baseline: float
    excess: float


def converse_bound(eps: float, d: KalmanDesign, n_y: int | None = None) -> ConverseResult:
    """Largest weighted MSE reachable by an attack with KLD rate ``eps``.

    ``bound = tr(P W) + n_y (delta_bar(eps / n_y) - 1)``.
    """
    if eps < 0:
        raise ValueError("eps must be non-negative")
    n_y = d.n_y if n_y is None else int(n_y)
    excess = n_y * (delta_bar(eps / n_y) - 1.0)
    return ConverseResult(bound=d.baseline_mse + excess, baseline=d.baseline_mse, excess=excess)


def kld_rate_iid_scaled(alpha: float, n_y: int) -> float:
    """Per-step KLD of i.i.d. ``N(0, alpha S)`` against i.i.d. ``N(0, S)``."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    return 0.5 * n_y * (alpha - 1.0 - np.log(alpha))


def _logdet_pd(M, what):
    sign, logdet = np.linalg.slogdet(M)
    if sign <= 0 or not np.isfinite(logdet):
        raise SingularCovariance(f"{what} is not positive definite")
    return logdet


def gaussian_sequence_kld(marginal_covs, residual_covs, Sigma_z) -> float:
    """KLD of a zero-mean Gaussian sequence against i.i.d. ``N(0, Sigma_z)``.

    The sequence is described step by step: ``marginal_covs[n]`` is the
    covariance of the n-th sample and ``residual_covs[n]`` the covariance of
    its one-step prediction error given all earlier samples (so the first
    entry of both lists coincides). The joint entropy is the sum of the
    conditional entropies.

    Parameters
    ----------
    marginal_covs, residual_covs : sequence of (N_y, N_y) array_like
    Sigma_z : (N_y, N_y) array_like

    Returns
    -------
    float
    """
    Sz = as_matrix(Sigma_z, "Sigma_z")
    ny = Sz.shape[0]
    if len(marginal_covs) != len(residual_covs):
        raise ValueError("marginal and residual sequences differ in length")
    logdet_z = _logdet_pd(Sz, "Sigma_z")
    total = 0.0
    for Sm, Sr in zip(marginal_covs, residual_covs):
        Sm = as_matrix(Sm, "marginal covariance", (ny, ny))
        Sr = as_matrix(Sr, "residual covariance", (ny, ny))
        total += 0.5 * (np.trace(np.linalg.solve(Sz, Sm)) - ny - _logdet_pd(Sr, "residual covariance") + logdet_z)
    return float(total)


def joint_covariance_kld(Gamma, Sigma_z) -> float:
    """KLD of ``N(0, Gamma)`` on ``k`` stacked samples against i.i.d. ``N(0, Sigma_z)``."""
    Sz = as_matrix(Sigma_z, "Sigma_z")
    ny = Sz.shape[0]
    G = as_matrix(Gamma, "Gamma")
    if G.shape[0] != G.shape[1] or G.shape[0] % ny:
        raise ValueError(f"Gamma of shape {G.shape} is not a stack of {ny}-dimensional samples")
    k = G.shape[0] // ny
    Sz_inv = np.linalg.inv(Sz)
    tr = sum(np.trace(Sz_inv @ G[i * ny:(i + 1) * ny, i * ny:(i + 1) * ny]) for i in range(k))
    return float(0.5 * (tr - k * ny - _logdet_pd(G, "Gamma") + k * _logdet_pd(Sz, "Sigma_z")))


@dataclass(frozen=True)
class KldEstimate:
    """Plug-in KLD rate split into a memory part and a marginal part.

    Standard errors come from a grouped jackknife over runs.
    """

    mi_rate: float
    marginal_rate: float
    mi_se: float
    marginal_se: float
    total_se: float

    @property
    def total(self) -> float:
        return self.mi_rate + self.marginal_rate


def _lagged_moments(z, p):
    # Rows are [z_n, z_{n-1}, ..., z_{n-p}] for every n >= p of every run.
    runs, steps, ny = z.shape
    cols = [z[:, p - j:steps - j, :] for j in range(p + 1)]
    X = np.concatenate(cols, axis=2).reshape(-1, (p + 1) * ny)
    return X.T @ X, X.shape[0]


def _rates(M, count, ny, Sz_inv, logdet_z):
    M = symmetrize(M / count)
    Sig = M[:ny, :ny]
    if M.shape[0] > ny:
        M01 = M[:ny, ny:]
        M11 = M[ny:, ny:]
        Sres = symmetrize(Sig - M01 @ np.linalg.solve(M11, M01.T))
    else:
        Sres = Sig
    ld_sig = _logdet_pd(Sig, "sample covariance")
    marginal = 0.5 * (np.trace(Sz_inv @ Sig) - ny - ld_sig + logdet_z)
    mi = 0.5 * (ld_sig - _logdet_pd(Sres, "residual covariance"))
    return mi, marginal


def empirical_kld_decomposition(z, Sigma_z, max_lag: int = 10, groups: int = 20) -> KldEstimate:
    """Gaussian plug-in estimate of the per-step KLD rate of innovation samples.

    ``marginal_rate`` is the divergence of the sample (zero-mean) covariance
    from ``Sigma_z``. ``mi_rate`` is ``0.5 ln det(Sig) / det(Sig_res)`` where
    ``Sig_res`` is the residual covariance of a pooled least-squares predictor
    on ``max_lag`` past samples. Their sum estimates the KLD rate.

    Parameters
    ----------
    z : (runs, steps, N_y) array_like
        Stationary segments, one per run (burn-in already removed).
    Sigma_z : (N_y, N_y) array_like
    max_lag : int
    groups : int
        Number of run groups for the jackknife.

    Raises
    ------
    InsufficientSamples
        Fewer than 100 runs or segments shorter than ``10 * max_lag``.
    """
    z = np.asarray(z, dtype=float)
    if z.ndim != 3:
        raise ValueError("z must have shape (runs, steps, n_y)")
    runs, steps, ny = z.shape
    if runs < 100:
        raise InsufficientSamples(f"need at least 100 runs, got {runs}")
    if max_lag < 0 or steps < 10 * max(max_lag, 1):
        raise InsufficientSamples(f"segment length {steps} is shorter than 10 x max_lag ({max_lag})")
    Sz = as_matrix(Sigma_z, "Sigma_z", (ny, ny))
    Sz_inv = np.linalg.inv(Sz)
    logdet_z = _logdet_pd(Sz, "Sigma_z")

    groups = max(2, min(groups, runs))
    bounds = np.linspace(0, runs, groups + 1).astype(int)
    parts = [_lagged_moments(z[a:b], max_lag) for a, b in zip(bounds[:-1], bounds[1:])]
    M_all = sum(M for M, _ in parts)
    n_all = sum(n for _, n in parts)
    mi, marginal = _rates(M_all, n_all, ny, Sz_inv, logdet_z)

    loo = np.array([_rates(M_all - M, n_all - n, ny, Sz_inv, logdet_z) for M, n in parts])
    loo = np.column_stack([loo, loo.sum(axis=1)])
    scale = (groups - 1) / groups
    se = np.sqrt(scale * ((loo - loo.mean(axis=0)) ** 2).sum(axis=0))
    return KldEstimate(mi_rate=float(mi), marginal_rate=float(marginal),
                       mi_se=float(se[0]), marginal_se=float(se[1]), total_se=float(se[2]))
