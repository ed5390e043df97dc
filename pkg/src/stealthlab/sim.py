"""Seeded Monte Carlo closed-loop engine.

The engine integrates the closed loop in estimation-error coordinates. The
controller error ``e = x - x_hat`` obeys ``e+ = A e + B (u_tilde - u) + w - K z``
with ``z = C e + v``, and the error of a filter fed the attacked input obeys
the same recursion without the attack term. Innovations therefore stay
bounded even when ``A`` is unstable and the nominal input is zero; the states
themselves are reconstructed only on request or when a feedback law needs
``x_hat``.

Every run draws from its own streams, derived from ``(seed, stream,
run_index)``, and runs are integrated in fixed chunks, so results do not
depend on the number of worker processes.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .attacks import (
    AttackPlanA1,
    AttackPlanA2,
    NoAttack,
    design_a1,
    design_a2,
    predicted_pw,
    start_runtime,
)
from .errors import InsufficientSamples, NumericOverflow
from .kalman import KalmanDesign, design
from .matnum import chol_factor
from .model import StateSpaceModel
from .stealth import converse_bound, empirical_kld_decomposition

CHUNK = 64


@dataclass(frozen=True)
class AttackSpec:
    """Attack to design before simulating: ``kind`` is ``none``, ``a1`` or ``a2``."""

    kind: str = "none"
    eps: float = 0.0

    def __post_init__(self):
        if self.kind not in ("none", "a1", "a2"):
            raise ValueError(f"unknown attack kind {self.kind!r}")
        if self.eps < 0:
            raise ValueError("eps must be non-negative")


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    """One Monte Carlo scenario.

    ``attack`` is either an :class:`AttackSpec` (designed on demand) or an
    already designed plan. ``feedback``, if given, is the gain ``G`` of the
    nominal law ``u = G x_hat``; otherwise ``u = 0``.
    """

    model: StateSpaceModel
    attack: object = field(default_factory=AttackSpec)
    horizon: int = 2000
    runs: int = 500
    burn_in: int = 100
    seed: int = 0
    feedback: np.ndarray | None = None
    record_states: bool = False
    stream: int = 0

    def __post_init__(self):
        if not self.horizon > self.burn_in >= 0:
            raise ValueError("need horizon > burn_in >= 0")
        if self.runs < 1:
            raise ValueError("runs must be at least 1")
        if self.feedback is not None:
            G = np.asarray(self.feedback, dtype=float)
            if G.shape != (self.model.n_u, self.model.n_x):
                raise ValueError(f"feedback gain must have shape {(self.model.n_u, self.model.n_x)}")


@dataclass(frozen=True, eq=False)
class TrajectoryRecord:
    """One run. Arrays are indexed by step ``k = 1..horizon`` along axis 0.

    ``x``, ``y`` and ``x_hat`` are filled only when states were requested.
    """

    z: np.ndarray
    u: np.ndarray
    u_attacked: np.ndarray
    run_index: int
    seed: int
    x: np.ndarray | None = None
    y: np.ndarray | None = None
    x_hat: np.ndarray | None = None
    max_tracking_gap: float = 0.0


@dataclass(frozen=True)
class PwEstimate:
    value: float
    standard_error: float
    runs: int
    steps: int


@dataclass(frozen=True, eq=False)
class _Scenario:
    model: StateSpaceModel
    kd: KalmanDesign
    plan: object
    horizon: int
    seed: int
    stream: int
    feedback: np.ndarray | None
    record_states: bool


def resolve_plan(spec, m: StateSpaceModel, kd: KalmanDesign, seed=None):
    """Turn an :class:`AttackSpec` into a plan; plans pass through."""
    if isinstance(spec, AttackSpec):
        if spec.kind == "a1":
            return design_a1(m, kd, spec.eps, seed=seed)
        if spec.kind == "a2":
            return design_a2(m, kd, spec.eps, seed=seed)
        return NoAttack(seed=seed)
    if spec is None:
        return NoAttack(seed=seed)
    if isinstance(spec, (NoAttack, AttackPlanA1, AttackPlanA2)):
        return spec
    raise TypeError(f"cannot simulate attack of type {type(spec).__name__}")


def _scenario(cfg: ExperimentConfig, kd=None, plan=None):
    kd = design(cfg.model) if kd is None else kd
    plan = resolve_plan(cfg.attack, cfg.model, kd, cfg.seed) if plan is None else plan
    fb = None if cfg.feedback is None else np.asarray(cfg.feedback, dtype=float)
    return _Scenario(cfg.model, kd, plan, cfg.horizon, cfg.seed, cfg.stream, fb, cfg.record_states)


def run_streams(seed: int, stream: int, run_index: int):
    """Independent ``(plant, attacker)`` generators for one run."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(stream, run_index))
    plant, attacker = ss.spawn(2)
    return np.random.default_rng(plant), np.random.default_rng(attacker)


def _first_bad_step(arr):
    bad = ~np.isfinite(arr.reshape(arr.shape[0], arr.shape[1], -1)).all(axis=(0, 2))
    return int(np.argmax(bad))


def _simulate_chunk(sc: _Scenario, indices):
    m, kd = sc.model, sc.kd
    A, B, C, K = m.A, m.B, m.C, kd.K
    n, nu, ny, H = m.n_x, m.n_u, m.n_y, sc.horizon
    R = len(indices)

    gP = chol_factor(kd.P)
    gW = chol_factor(m.Sigma_w)
    gV = chol_factor(m.Sigma_v)
    e0 = np.empty((R, n))
    w = np.empty((R, H, n))
    v = np.empty((R, H, ny))
    attacker_rngs = []
    for r, idx in enumerate(indices):
        plant, attacker = run_streams(sc.seed, sc.stream, idx)
        e0[r] = gP @ plant.standard_normal(n)
        w[r] = plant.standard_normal((H, n)) @ gW.T
        v[r] = plant.standard_normal((H, ny)) @ gV.T
        attacker_rngs.append(attacker)
    runtime = start_runtime(sc.plan, m, kd, attacker_rngs)

    track = sc.record_states or sc.feedback is not None
    z_out = np.empty((R, H, ny))
    u_out = np.zeros((R, H, nu))
    ut_out = np.empty((R, H, nu))
    if sc.record_states:
        x_out, y_out, xh_out = np.empty((R, H, n)), np.empty((R, H, ny)), np.empty((R, H, n))

    e = e0
    e_aux = e0.copy()
    x_hat = np.zeros((R, n))
    gap = 0.0
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(H):
            gap = max(gap, float(np.abs(runtime.e_tilde - (e_aux - e)).max(initial=0.0)))
            z = e @ C.T + v[:, k]
            u = x_hat @ sc.feedback.T if sc.feedback is not None else np.zeros((R, nu))
            ut = runtime.step(u)
            z_out[:, k] = z
            u_out[:, k] = u
            ut_out[:, k] = ut
            if sc.record_states:
                x_out[:, k] = x_hat + e
                y_out[:, k] = x_hat @ C.T + z
                xh_out[:, k] = x_hat
            e_next = e @ A.T + (ut - u) @ B.T + w[:, k] - z @ K.T
            e_aux = e_aux @ A.T + w[:, k] - (e_aux @ C.T + v[:, k]) @ K.T
            e = e_next
            if track:
                x_hat = x_hat @ A.T + z @ K.T + u @ B.T
                if not np.all(np.isfinite(x_hat)):
                    raise NumericOverflow(f"state estimate overflowed at step {k + 2}", step=k + 1)
    if not np.all(np.isfinite(z_out)):
        step = _first_bad_step(z_out)
        raise NumericOverflow(f"innovations overflowed at step {step + 1}", step=step)

    out = dict(z=z_out, u=u_out, u_attacked=ut_out, gap=gap)
    if sc.record_states:
        out.update(x=x_out, y=y_out, x_hat=xh_out)
    return out


def _chunks(runs):
    return [list(range(a, min(a + CHUNK, runs))) for a in range(0, runs, CHUNK)]


def _run_chunk_z(args):
    sc, idx = args
    out = _simulate_chunk(sc, idx)
    return out["z"], out["gap"]


@dataclass(frozen=True, eq=False)
class BatchResult:
    """Innovations of all runs, ``z[run, step, :]``, and the attack plan used."""

    z: np.ndarray
    plan: object
    kd: KalmanDesign
    max_tracking_gap: float


def simulate(cfg: ExperimentConfig, jobs: int = 1, kd: KalmanDesign | None = None, plan=None) -> BatchResult:
    """Innovations of ``cfg.runs`` independent runs.

    Runs are integrated in fixed chunks of 64; ``jobs > 1`` farms chunks out
    to worker processes without changing any output bit.
    """
    sc = _scenario(cfg, kd, plan)
    sc = _Scenario(sc.model, sc.kd, sc.plan, sc.horizon, sc.seed, sc.stream, sc.feedback, False)
    work = [(sc, idx) for idx in _chunks(cfg.runs)]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_chunk_z, work))
    else:
        results = [_run_chunk_z(w) for w in work]
    z = np.concatenate([r[0] for r in results], axis=0)
    return BatchResult(z=z, plan=sc.plan, kd=sc.kd, max_tracking_gap=max(r[1] for r in results))


def run_closed_loop(cfg: ExperimentConfig, run_index: int, kd: KalmanDesign | None = None, plan=None) -> TrajectoryRecord:
    """Simulate a single run; deterministic in ``(cfg.seed, cfg.stream, run_index)``.

    Raises
    ------
    NumericOverflow
        With the offending step if a recorded quantity leaves the finite range.
    """
    sc = _scenario(cfg, kd, plan)
    out = _simulate_chunk(sc, [run_index])
    extra = {}
    if sc.record_states:
        extra = dict(x=out["x"][0], y=out["y"][0], x_hat=out["x_hat"][0])
    return TrajectoryRecord(z=out["z"][0], u=out["u"][0], u_attacked=out["u_attacked"][0],
                            run_index=run_index, seed=cfg.seed, max_tracking_gap=out["gap"], **extra)


def _innovations(records):
    if isinstance(records, BatchResult):
        return records.z
    if isinstance(records, np.ndarray):
        return records
    return np.stack([r.z for r in records])


def estimate_pw(records, d: KalmanDesign, burn_in: int = 100) -> PwEstimate:
    """Weighted MSE from innovations.

    Averages ``z' Sigma_z^{-1} z`` over runs and post-burn-in steps, then
    subtracts ``tr(Sigma_v Sigma_z^{-1}) = N_y - tr(P W)``. The standard error
    is the spread of per-run means over the square root of the run count.

    Parameters
    ----------
    records : list of TrajectoryRecord, BatchResult or (runs, steps, N_y) array
    d : KalmanDesign
    burn_in : int
    """
    z = _innovations(records)
    if z.shape[0] < 2:
        raise InsufficientSamples("need at least 2 runs")
    seg = z[:, burn_in:]
    if seg.shape[1] < 1:
        raise InsufficientSamples("burn-in leaves no samples")
    q = np.einsum("rki,ij,rkj->rk", seg, np.linalg.inv(d.Sigma_z), seg)
    offset = d.n_y - d.baseline_mse
    run_means = q.mean(axis=1) - offset
    return PwEstimate(value=float(run_means.mean()),
                      standard_error=float(run_means.std(ddof=1) / np.sqrt(len(run_means))),
                      runs=int(seg.shape[0]), steps=int(seg.shape[1]))


def autocorrelations(z, max_lag: int = 5):
    """Whitened sample autocorrelation matrices for lags ``1..max_lag``.

    ``z`` is ``(runs, steps, N_y)`` or ``(steps, N_y)``; lagged products are
    pooled within runs. Returns ``(rho, n)`` where ``rho[l - 1]`` is the lag-l
    matrix and ``n`` the pooled sample count at lag 0.
    """
    z = np.asarray(z, dtype=float)
    if z.ndim == 2:
        z = z[None]
    runs, steps, ny = z.shape
    n = runs * steps
    S0 = np.einsum("rki,rkj->ij", z, z) / n
    Linv = np.linalg.inv(np.linalg.cholesky(S0))
    zw = z @ Linv.T
    rho = np.array([np.einsum("rki,rkj->ij", zw[:, l:], zw[:, :-l]) / n for l in range(1, max_lag + 1)])
    return rho, n


def is_white(z, max_lag: int = 5, band: float = 4.0) -> bool:
    """All whitened autocorrelations at lags ``1..max_lag`` within ``band / sqrt(n)``."""
    rho, n = autocorrelations(z, max_lag)
    return bool(np.abs(rho).max() <= band / np.sqrt(n))


@dataclass(frozen=True)
class SweepRow:
    eps: float
    converse: float
    predicted: float
    achieved: float
    standard_error: float
    kld_rate: float
    kld_se: float


def sweep(cfg: ExperimentConfig, eps_grid, jobs: int = 1, max_lag: int = 10) -> list:
    """Converse bound, predicted and simulated weighted MSE across ``eps_grid``.

    ``cfg.attack`` must be an :class:`AttackSpec`; its ``eps`` is replaced by
    each grid value.
    """
    grid = [float(e) for e in eps_grid]
    if not grid:
        raise ValueError("eps grid is empty")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("eps grid must be strictly increasing")
    if not isinstance(cfg.attack, AttackSpec):
        raise TypeError("sweep needs an AttackSpec template")
    m = cfg.model
    kd = design(m)
    rows = []
    for eps in grid:
        spec = AttackSpec(cfg.attack.kind, eps)
        plan = resolve_plan(spec, m, kd, cfg.seed)
        res = simulate(cfg, jobs=jobs, kd=kd, plan=plan)
        pw = estimate_pw(res, kd, cfg.burn_in)
        seg = res.z[:, cfg.burn_in:]
        if seg.shape[0] >= 100 and seg.shape[1] >= 10 * max(max_lag, 1):
            kl = empirical_kld_decomposition(seg, kd.Sigma_z, max_lag)
            kld, kld_se = kl.total, kl.total_se
        else:
            kld, kld_se = float("nan"), float("nan")
        rows.append(SweepRow(eps=eps, converse=converse_bound(eps, kd).bound,
                             predicted=predicted_pw(plan, m, kd), achieved=pw.value,
                             standard_error=pw.standard_error, kld_rate=kld, kld_se=kld_se))
    return rows
