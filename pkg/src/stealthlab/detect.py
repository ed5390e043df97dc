"""Detectors over innovation windows, ROC estimation and false-alarm exponents."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .attacks import attacked_innovation_covariance
from .errors import ExponentUnfittable, SingularCovariance
from .kalman import design
from .sim import ExperimentConfig, resolve_plan, simulate

MIN_FALSE_ALARMS = 10


@dataclass(frozen=True)
class DetectorSpec:
    """``kind`` is ``llr`` or ``chi2``.

    ``window`` limits the statistic to the most recent samples (``None`` uses
    the whole history). A fixed ``threshold`` overrides calibration to the
    missed-detection level ``delta``.
    """

    kind: str = "llr"
    window: int | None = None
    threshold: float | None = None
    delta: float = 0.1

    def __post_init__(self):
        if self.kind not in ("llr", "chi2"):
            raise ValueError(f"unknown detector {self.kind!r}")
        if self.window is not None and self.window < 1:
            raise ValueError("window must be at least 1")
        if self.threshold is None and not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")


@dataclass(frozen=True)
class DetectorReport:
    """Per-horizon error rates.

    ``rates`` holds ``-ln(p_F) / k`` per horizon; ``exponent_estimate`` is
    the least-squares slope of ``-ln p_F`` against ``k`` over the horizons in
    ``fit_horizons`` (``None`` if too few horizons had enough false alarms).
    ``stein_rate`` is the mean H1 log-likelihood ratio per step at the
    longest horizon, the rate the exponent approaches for long horizons.
    """

    horizons: tuple
    p_F: tuple
    p_D: tuple
    thresholds: tuple
    rates: tuple
    exponent_estimate: float | None
    fit_horizons: tuple
    stein_rate: float
    trials: int


def _quad(z, M):
    return np.einsum("...i,ij,...j->...", z, M, z)


def llr_statistic(z, Sigma_z, Sigma_alt):
    """Gaussian log-likelihood ratio of i.i.d. ``N(0, Sigma_alt)`` against ``N(0, Sigma_z)``.

    ``z`` has shape ``(..., k, N_y)``; the result sums over the window axis.
    """
    Sz = np.asarray(Sigma_z, dtype=float)
    Sa = np.asarray(Sigma_alt, dtype=float)
    sa, lda = np.linalg.slogdet(Sa)
    sz, ldz = np.linalg.slogdet(Sz)
    if sa <= 0 or sz <= 0:
        raise SingularCovariance("log-likelihood ratio needs positive definite covariances")
    z = np.asarray(z, dtype=float)
    k = z.shape[-2]
    M = np.linalg.inv(Sz) - np.linalg.inv(Sa)
    return -0.5 * k * (lda - ldz) + 0.5 * _quad(z, M).sum(axis=-1)


def chi2_statistic(z, Sigma_z):
    """Sum over the window of ``z' Sigma_z^{-1} z``."""
    z = np.asarray(z, dtype=float)
    return _quad(z, np.linalg.inv(np.asarray(Sigma_z, dtype=float))).sum(axis=-1)


def calibrate_threshold(h1_stats, delta: float) -> float:
    """Smallest order statistic that keeps the empirical miss rate at most ``delta``.

    Alarms are raised when the statistic is at least the threshold.
    """
    s = np.sort(np.asarray(h1_stats, dtype=float))
    return float(s[int(np.floor(delta * s.size))])


def fit_exponent(horizons, p_F, trials: int):
    """Least-squares slope of ``-ln p_F`` against ``k`` (with intercept).

    Only horizons with at least ``MIN_FALSE_ALARMS`` false alarms are used.

    Returns
    -------
    slope : float
    used : tuple of int

    Raises
    ------
    ExponentUnfittable
        Fewer than two usable horizons.
    """
    k = np.asarray(horizons, dtype=float)
    p = np.asarray(p_F, dtype=float)
    ok = p * trials >= MIN_FALSE_ALARMS
    if ok.sum() < 2:
        raise ExponentUnfittable(
            f"only {int(ok.sum())} horizon(s) have {MIN_FALSE_ALARMS} or more false alarms; "
            "more trials or shorter horizons are needed"
        )
    slope = np.polyfit(k[ok], -np.log(p[ok]), 1)[0]
    return float(slope), tuple(int(h) for h in k[ok])


def _statistics(z, horizons, burn_in, spec, Sigma_z, Sigma_alt):
    out = []
    for k in horizons:
        seg = z[:, burn_in:burn_in + k]
        if spec.window is not None:
            seg = seg[:, -spec.window:]
        if spec.kind == "llr":
            out.append(llr_statistic(seg, Sigma_z, Sigma_alt))
        else:
            out.append(chi2_statistic(seg, Sigma_z))
    return out


def estimate_roc(h0: ExperimentConfig, h1: ExperimentConfig, spec: DetectorSpec, horizons, trials: int,
                 jobs: int = 1, strict: bool = True) -> DetectorReport:
    """False-alarm and detection probabilities of ``spec`` for each horizon.

    ``trials`` runs of each scenario are simulated over ``burn_in + max(horizons)``
    steps; the statistic at horizon ``k`` uses the ``k`` samples after the
    burn-in. H1 runs use stream 1 so they are independent of the H0 runs.
    For each horizon the threshold is the H1 order statistic that keeps
    ``1 - p_D <= delta`` (unless fixed), and ``p_F`` is measured on H0.

    The LLR detector assumes i.i.d. innovations under H1 with the stationary
    attacked covariance.

    Raises
    ------
    ExponentUnfittable
        If ``strict`` and fewer than two horizons have enough false alarms.
    """
    horizons = sorted(int(k) for k in horizons)
    if not horizons or horizons[0] < 1:
        raise ValueError("horizons must be positive")
    length = h1.burn_in + horizons[-1]
    m = h1.model
    kd = design(m)
    plan0 = resolve_plan(h0.attack, m, kd, h0.seed)
    plan1 = resolve_plan(h1.attack, m, kd, h1.seed)
    cfg0 = replace(h0, horizon=length, runs=trials, stream=0)
    cfg1 = replace(h1, horizon=length, runs=trials, stream=1)
    z0 = simulate(cfg0, jobs=jobs, kd=kd, plan=plan0).z
    z1 = simulate(cfg1, jobs=jobs, kd=kd, plan=plan1).z

    Sigma_alt = attacked_innovation_covariance(plan1, m, kd)
    s0 = _statistics(z0, horizons, h0.burn_in, spec, kd.Sigma_z, Sigma_alt)
    s1 = _statistics(z1, horizons, h1.burn_in, spec, kd.Sigma_z, Sigma_alt)

    p_F, p_D, lam = [], [], []
    for a, b in zip(s0, s1):
        t = spec.threshold if spec.threshold is not None else calibrate_threshold(b, spec.delta)
        lam.append(float(t))
        p_F.append(float(np.mean(a >= t)))
        p_D.append(float(np.mean(b >= t)))
    with np.errstate(divide="ignore"):
        rates = tuple(float(-np.log(p) / k) if p > 0 else float("inf") for p, k in zip(p_F, horizons))
    try:
        slope, used = fit_exponent(horizons, p_F, trials)
    except ExponentUnfittable:
        if strict:
            raise
        slope, used = None, ()
    llr_last = llr_statistic(z1[:, h1.burn_in:h1.burn_in + horizons[-1]], kd.Sigma_z, Sigma_alt)
    return DetectorReport(
        horizons=tuple(horizons), p_F=tuple(p_F), p_D=tuple(p_D), thresholds=tuple(lam), rates=rates,
        exponent_estimate=slope, fit_horizons=used, stein_rate=float(np.mean(llr_last) / horizons[-1]),
        trials=int(trials),
    )
