"""Synthesis and runtime of the two actuator-injection attacks.

``A1`` shapes the controller's innovations into i.i.d. ``N(0, delta_bar Sigma_z)``
by feeding attacker noise through a right inverse of the estimation-error
system. ``A2`` works for any plant: it cancels the error memory with a cheap
LQG gain and injects white noise sized to meet a KLD budget.

Sign conventions: ``e_tilde`` is the controller estimate minus the estimate a
filter fed the attacked input would produce. It evolves as
``e_tilde+ = (A - K C) e_tilde - B (u_tilde - u)`` and the controller sees
innovations ``z_tilde = z_a - C e_tilde``. For A1 the targets are
``-C e_tilde``, so the injected noise adds to the innovations.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize

from .errors import NoBracket, NonConvergence, NotRightInvertible, UnstableClosedLoop
from .kalman import KalmanDesign, error_dynamics
from .matnum import (
    DEFAULT_OPTIONS,
    SolverOptions,
    as_matrix,
    chol_factor,
    pseudoinverse,
    psd_project,
    solve_dare,
    solve_dlyap,
    spectral_radius,
    symmetrize,
)
from .model import StateSpaceModel, _triple, block_toeplitz, is_right_invertible, markov_params
from .stealth import delta_bar

DEFAULT_ETA_SCHEDULE = (1e-2, 1e-4, 1e-6, 1e-8)

# Zero-dynamics modes with |lambda| above this are solved backwards in time.
_UNSTABLE_MARGIN = 1e-6
_PREVIEW_CAP = 10000


# ---------------------------------------------------------------------------
# Delayed right inverse
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DelayedRightInverse:
    """Online right inverse of ``(F, B, C)`` with output delay ``delay``.

    At each step the inverse receives a window of targets and returns the
    minimum-norm input that puts the oldest pending target on the output
    ``delay`` steps later. Its internal state is the forward system's state,
    split by an ordered Schur decomposition of the tracking dynamics
    ``F - B G O``:

    * stable and marginal modes (``xi``) are propagated forward;
    * unstable modes, which exist when the system has invariant zeros outside
      the unit circle, are never propagated. They are recomputed every step
      as the bounded (anti-causal) solution driven by ``preview`` future
      targets, truncated once the neglected tail is below ``truncation``.

    Without unstable zeros ``preview`` is 0 and this is the plain recursion
    ``phi_k = G (tau_k - O e_k)``. With them, the produced inputs reproduce
    the targets exactly once the start-up mismatch has decayed through ``F``.
    """

    F: np.ndarray
    B: np.ndarray
    C: np.ndarray
    delay: int
    gain: np.ndarray
    observer: np.ndarray
    basis_unstable: np.ndarray
    basis_stable: np.ndarray
    coupling: np.ndarray
    stable_dynamics: np.ndarray
    stable_input: np.ndarray
    anticausal: np.ndarray
    preview: int
    truncation: float
    zero_dynamics_eigs: np.ndarray = field(repr=False)

    @property
    def n_unstable(self) -> int:
        return self.basis_unstable.shape[1]

    @property
    def window_length(self) -> int:
        """Targets needed per step: ``delay`` pending ones plus ``preview`` future ones."""
        return self.delay + self.preview

    def initial_state(self, batch: int | None = None) -> np.ndarray:
        ks = self.basis_stable.shape[1]
        return np.zeros(ks) if batch is None else np.zeros((batch, ks))

    def step(self, xi, window):
        """One inverse step.

        Parameters
        ----------
        xi : (..., n_stable) ndarray
            Forward-propagated stable coordinates.
        window : (..., window_length, N_y) ndarray
            Targets ``t_{k+1-d}, ..., t_{k+preview}``; entry ``d - 1`` is the
            target issued at the current step.

        Returns
        -------
        phi : (..., N_u) ndarray
        xi_next : (..., n_stable) ndarray
        """
        ny = self.C.shape[0]
        flat = window.reshape(window.shape[:-2] + (-1,))
        tau = flat[..., :self.delay * ny]
        e = xi @ self.basis_stable.T
        if self.n_unstable:
            chi = flat @ self.anticausal.T
            e = e + (chi - xi @ self.coupling.T) @ self.basis_unstable.T
        phi = (tau - e @ self.observer.T) @ self.gain.T
        xi_next = xi @ self.stable_dynamics.T + tau @ self.stable_input.T
        return phi, xi_next

    def invert(self, targets) -> np.ndarray:
        """Inputs ``phi_1..phi_T`` for a finite target sequence ``t_1..t_T``.

        Targets before the start and after the end are taken as zero.
        """
        t = np.asarray(targets, dtype=float)
        ny = self.C.shape[0]
        if t.ndim != 2 or t.shape[1] != ny:
            raise ValueError(f"targets must have shape (T, {ny})")
        T = t.shape[0]
        padded = np.vstack([np.zeros((self.delay - 1, ny)), t, np.zeros((self.preview + 1, ny))])
        xi = self.initial_state()
        phi = np.empty((T, self.B.shape[1]))
        for k in range(T):
            phi[k], xi = self.step(xi, padded[k:k + self.window_length])
        return phi


def _outside_unit_circle(re, im):
    return np.hypot(re, im) > 1.0 + _UNSTABLE_MARGIN


def build_delayed_right_inverse(F, B=None, C=None) -> DelayedRightInverse:
    """Construct the online inverse of a right-invertible ``(F, B, C)``.

    Raises
    ------
    NotRightInvertible
    """
    F, B, C = _triple(F, B, C)
    n, nu, ny = F.shape[0], B.shape[1], C.shape[0]
    ok, d = is_right_invertible(F, B, C)
    if not ok:
        raise NotRightInvertible(
            "system is not right invertible; the innovation-shaping attack needs "
            "a right inverse (use the a2 attack instead)"
        )
    T = block_toeplitz(markov_params(F, B, C, d), d)
    G = pseudoinverse(T)[:nu]
    O = np.vstack([C @ np.linalg.matrix_power(F, j) for j in range(1, d + 1)])
    Fz = F - B @ G @ O
    BG = B @ G

    Ts, Z, ku = linalg.schur(Fz, output="real", sort=_outside_unit_circle)
    Zu, Zs = Z[:, :ku], Z[:, ku:]
    T11, T12, T22 = Ts[:ku, :ku], Ts[:ku, ku:], Ts[ku:, ku:]
    b = Z.T @ BG
    b_u, b_s = b[:ku], b[ku:]

    preview, truncation = 0, 0.0
    if ku:
        X = linalg.solve_sylvester(T11, -T22, T12) if T22.size else np.zeros((ku, 0))
        b_chi = b_u + X @ b_s
        T11_inv = np.linalg.inv(T11)
        weights = []
        power = T11_inv
        while True:
            weights.append(-power @ b_chi)
            power = power @ T11_inv
            truncation = np.linalg.norm(power, 2)
            if truncation < 1e-16 or len(weights) > _PREVIEW_CAP:
                break
        preview = len(weights) - 1
        Lam = np.zeros((ku, (d + preview) * ny))
        for j, Wj in enumerate(weights):
            Lam[:, j * ny:(j + d) * ny] += Wj
    else:
        X = np.zeros((0, n))
        Lam = np.zeros((0, d * ny))

    return DelayedRightInverse(
        F=F, B=B, C=C, delay=d, gain=G, observer=O,
        basis_unstable=Zu, basis_stable=Zs, coupling=X,
        stable_dynamics=T22, stable_input=b_s, anticausal=Lam,
        preview=preview, truncation=float(truncation),
        zero_dynamics_eigs=np.linalg.eigvals(Fz),
    )


# ---------------------------------------------------------------------------
# Plans
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class NoAttack:
    """Leaves the actuation channel untouched."""

    eps: float = 0.0
    seed: int | None = None


@dataclass(frozen=True, eq=False)
class AttackPlanA1:
    eps: float
    zeta_covariance: np.ndarray
    inverse: DelayedRightInverse
    seed: int | None = None

    @property
    def is_null(self) -> bool:
        return not np.any(self.zeta_covariance)


@dataclass(frozen=True, eq=False)
class AttackPlanA2:
    eps: float
    L: np.ndarray
    Sigma_zeta: np.ndarray
    alpha: float
    S: np.ndarray
    Sigma_e: np.ndarray
    predicted_eps: float
    predicted_pw: float
    eta_schedule: tuple = DEFAULT_ETA_SCHEDULE
    shaping_error: float = float("nan")
    seed: int | None = None

    @property
    def is_null(self) -> bool:
        return not np.any(self.Sigma_zeta)


def design_a1(m: StateSpaceModel, d: KalmanDesign, eps: float, seed: int | None = None) -> AttackPlanA1:
    """Innovation-shaping attack for a right-invertible plant.

    The injected noise has covariance ``(delta_bar(eps / N_y) - 1) Sigma_z``.
    """
    if eps < 0:
        raise ValueError("eps must be non-negative")
    inv = build_delayed_right_inverse(error_dynamics(m, d), m.B, m.C)
    scale = delta_bar(eps / m.n_y) - 1.0
    return AttackPlanA1(eps=float(eps), zeta_covariance=scale * d.Sigma_z, inverse=inv, seed=seed)


def cheap_lqg_gain(F, B, W, eta_schedule=DEFAULT_ETA_SCHEDULE, opts: SolverOptions = DEFAULT_OPTIONS) -> np.ndarray:
    """State-feedback gain of the ``eta -> 0`` LQ problem with state weight ``W``.

    For each ``eta`` the control Riccati equation
    ``T = F'(T - T B (B'T B + eta I)^{-1} B'T) F + W`` is solved and
    ``L = (B'T B + eta I)^{-1} B'T F``. The first gain that moves by less
    than ``1e-6`` (relative) from the previous one is returned, otherwise
    the gain at the last ``eta``.
    """
    F = as_matrix(F, "F")
    n = F.shape[0]
    B = as_matrix(B, "B", (n, None))
    W = as_matrix(W, "W", (n, n))
    etas = [float(e) for e in eta_schedule]
    if not etas or any(e <= 0 for e in etas) or any(b >= a for a, b in zip(etas, etas[1:])):
        raise ValueError("eta_schedule must be strictly decreasing positive numbers")
    nu = B.shape[1]
    prev = None
    for eta in etas:
        T = solve_dare(F.T, B.T, W, eta * np.eye(nu), opts)
        L = np.linalg.solve(B.T @ T @ B + eta * np.eye(nu), B.T @ T @ F)
        if prev is not None:
            change = np.linalg.norm(L - prev)
            ref = np.linalg.norm(prev)
            if change <= 1e-6 * ref or (ref == 0 and change == 0):
                return L
        prev = L
    return prev


def sigma_zeta(alpha: float, F_cl, B, C, Sigma_z) -> np.ndarray:
    """Noise covariance aiming at ``C Sigma_e C' = alpha^2 Sigma_z``.

    The unscaled expression is projected onto the PSD cone and then scaled by
    ``alpha**2``, so the result is exactly quadratic in ``alpha``.
    """
    Cp = pseudoinverse(C)
    Bp = pseudoinverse(B)
    M = Cp @ as_matrix(Sigma_z, "Sigma_z") @ Cp.T
    raw = Bp @ (M - F_cl @ M @ F_cl.T) @ Bp.T
    return alpha ** 2 * psd_project(raw)


def _closed_loop(m, d, L):
    F_cl = error_dynamics(m, d) - m.B @ L
    if spectral_radius(F_cl) >= 1.0:
        raise UnstableClosedLoop(f"A - KC - BL has spectral radius {spectral_radius(F_cl):.6g} >= 1")
    return F_cl


def _eps_from(S, Sigma_e, W):
    n = W.shape[0]
    _, logdet = np.linalg.slogdet(np.eye(n) + S @ W)
    return float(-0.5 * logdet + 0.5 * np.trace(Sigma_e @ W))


def predicted_eps_a2(L, Sigma_zeta, m: StateSpaceModel, d: KalmanDesign, opts: SolverOptions = DEFAULT_OPTIONS):
    """KLD rate of the innovations under the feedback-cancelling attack.

    Returns
    -------
    eps : float
        ``-0.5 ln det(I + S W) + 0.5 tr(Sigma_e W)``.
    S : ndarray
        Stationary prediction-error covariance of the attacked innovation
        process, which sets its entropy rate.
    Sigma_e : ndarray
        Stationary covariance of ``e_tilde``.

    Raises
    ------
    UnstableClosedLoop
    NonConvergence
    """
    F_cl = _closed_loop(m, d, L)
    Q = symmetrize(m.B @ Sigma_zeta @ m.B.T)
    Sigma_e = solve_dlyap(F_cl, Q, opts)
    S = solve_dare(F_cl, m.C, Q, d.Sigma_z, opts)
    return _eps_from(S, Sigma_e, d.W), S, Sigma_e


def predicted_pw_a2(Sigma_e, d: KalmanDesign) -> float:
    """Weighted MSE under the attack: ``tr(P W) + tr(Sigma_e W)``."""
    return float(d.baseline_mse + np.trace(Sigma_e @ d.W))


def solve_alpha(m: StateSpaceModel, d: KalmanDesign, L, eps_target: float,
                opts: SolverOptions = DEFAULT_OPTIONS) -> float:
    """Noise scale ``alpha`` at which the predicted KLD rate equals ``eps_target``.

    The bracket ``(0, alpha_hi]`` starts at ``alpha_hi = 1`` and doubles until
    the predicted rate exceeds the target.

    Raises
    ------
    NoBracket
        If the noise covariance projects to zero or no bracket is found.
    """
    if not eps_target > 0:
        raise ValueError("eps_target must be positive")
    F_cl = _closed_loop(m, d, L)
    Z1 = sigma_zeta(1.0, F_cl, m.B, m.C, d.Sigma_z)
    if not np.any(Z1):
        raise NoBracket("noise covariance projects to zero; the attack cannot spend any KLD budget")
    Q1 = symmetrize(m.B @ Z1 @ m.B.T)
    Sigma_e1 = solve_dlyap(F_cl, Q1, opts)

    def excess(alpha):
        S = solve_dare(F_cl, m.C, alpha ** 2 * Q1, d.Sigma_z, opts)
        return _eps_from(S, alpha ** 2 * Sigma_e1, d.W) - eps_target

    hi = 1.0
    for _ in range(64):
        if excess(hi) > 0:
            break
        hi *= 2.0
    else:
        raise NoBracket(f"predicted KLD never exceeded {eps_target} while doubling alpha")
    alpha = optimize.brentq(excess, 0.0, hi, xtol=1e-14, rtol=1e-14, maxiter=500)
    if abs(excess(alpha)) >= 1e-6:
        raise NonConvergence("alpha solve missed the KLD target by more than 1e-6")
    return alpha


def design_a2(m: StateSpaceModel, d: KalmanDesign, eps: float, eta_schedule=DEFAULT_ETA_SCHEDULE,
              seed: int | None = None, opts: SolverOptions = DEFAULT_OPTIONS) -> AttackPlanA2:
    """Feedback-cancelling attack calibrated to KLD rate ``eps``."""
    if eps < 0:
        raise ValueError("eps must be non-negative")
    F = error_dynamics(m, d)
    L = cheap_lqg_gain(F, m.B, d.W, eta_schedule, opts)
    F_cl = _closed_loop(m, d, L)
    alpha = 0.0 if eps == 0 else solve_alpha(m, d, L, eps, opts)
    Sz = sigma_zeta(alpha, F_cl, m.B, m.C, d.Sigma_z)
    pred_eps, S, Sigma_e = predicted_eps_a2(L, Sz, m, d, opts)
    target = alpha ** 2 * d.Sigma_z
    shaping = float(np.linalg.norm(m.C @ Sigma_e @ m.C.T - target) / np.linalg.norm(target)) if alpha else 0.0
    return AttackPlanA2(
        eps=float(eps), L=L, Sigma_zeta=Sz, alpha=float(alpha), S=S, Sigma_e=Sigma_e,
        predicted_eps=pred_eps, predicted_pw=predicted_pw_a2(Sigma_e, d),
        eta_schedule=tuple(float(e) for e in eta_schedule), shaping_error=shaping, seed=seed,
    )


def attacked_innovation_covariance(plan, m: StateSpaceModel, d: KalmanDesign) -> np.ndarray:
    """Stationary covariance of the controller innovations under ``plan``."""
    if isinstance(plan, AttackPlanA1):
        return d.Sigma_z + plan.zeta_covariance
    if isinstance(plan, AttackPlanA2):
        return symmetrize(m.C @ plan.Sigma_e @ m.C.T + d.Sigma_z)
    return d.Sigma_z.copy()


def predicted_pw(plan, m: StateSpaceModel, d: KalmanDesign) -> float:
    """Weighted MSE the plan should induce, from its innovation covariance."""
    Sz_inv = np.linalg.inv(d.Sigma_z)
    return float(np.trace(attacked_innovation_covariance(plan, m, d) @ Sz_inv) - np.trace(m.Sigma_v @ Sz_inv))


# ---------------------------------------------------------------------------
# Runtimes
# ---------------------------------------------------------------------------

class _NoiseFeed:
    """Per-run Gaussian streams drawn in blocks; ``factor @ N(0, I)`` samples."""

    def __init__(self, rngs, factor, block=256):
        self.rngs = rngs
        self.factor = factor
        self.block = block

    def draw(self, count=None):
        count = self.block if count is None else count
        dim = self.factor.shape[1]
        nu = np.stack([g.standard_normal((count, dim)) for g in self.rngs])
        return nu @ self.factor.T


def _as_rngs(rngs, seed):
    if rngs is None:
        return [np.random.default_rng(seed)]
    if isinstance(rngs, np.random.Generator):
        return [rngs]
    return list(rngs)


class AttackRuntime:
    """Per-run attacker state; ``step`` maps nominal to attacked inputs.

    The runtime sees only the nominal input, its own state and its own random
    streams. One generator per run; ``step`` accepts ``(N_u,)`` inputs for a
    single run or ``(runs, N_u)`` for a batch.
    """

    def __init__(self, plan, m: StateSpaceModel, d: KalmanDesign, rngs=None):
        self.plan = plan
        self.rngs = _as_rngs(rngs, getattr(plan, "seed", None))
        self.batch = len(self.rngs)
        self.F = error_dynamics(m, d)
        self.B = m.B
        self.e_tilde = np.zeros((self.batch, m.n_x))
        self.k = 1

    def _inject(self, u):
        raise NotImplementedError

    def step(self, u):
        u = np.asarray(u, dtype=float)
        single = u.ndim == 1
        U = u.reshape(1, -1) if single else u
        if U.shape[0] != self.batch:
            raise ValueError(f"runtime holds {self.batch} runs, got input batch {U.shape[0]}")
        out = self._inject(U)
        self.k += 1
        return out[0] if single else out


class _IdentityRuntime(AttackRuntime):
    def _inject(self, u):
        return u.copy()


class A1Runtime(AttackRuntime):
    def __init__(self, plan: AttackPlanA1, m, d, rngs=None):
        super().__init__(plan, m, d, rngs)
        inv = plan.inverse
        self.inverse = inv
        self.feed = _NoiseFeed(self.rngs, chol_factor(plan.zeta_covariance))
        self.xi = inv.initial_state(self.batch)
        # Leading zeros stand for targets before the attack starts.
        self._targets = np.zeros((self.batch, inv.delay - 1, m.n_y))
        self._start = 0

    def _window(self):
        need = self._start + self.inverse.window_length
        while self._targets.shape[1] < need:
            self._targets = np.concatenate([self._targets, self.feed.draw()], axis=1)
        window = self._targets[:, self._start:need]
        self._start += 1
        if self._start > 4096:
            self._targets = self._targets[:, self._start:]
            self._start = 0
        return window

    def _inject(self, u):
        phi, self.xi = self.inverse.step(self.xi, self._window())
        self.e_tilde = self.e_tilde @ self.F.T - phi @ self.B.T
        return u + phi


class A2Runtime(AttackRuntime):
    def __init__(self, plan: AttackPlanA2, m, d, rngs=None):
        super().__init__(plan, m, d, rngs)
        self.L = plan.L
        self.F_cl = self.F - m.B @ plan.L
        self.feed = _NoiseFeed(self.rngs, chol_factor(plan.Sigma_zeta))
        self._buf = np.zeros((self.batch, 0, m.n_u))
        self._pos = 0

    def _inject(self, u):
        if self._pos >= self._buf.shape[1]:
            self._buf = self.feed.draw()
            self._pos = 0
        zeta = self._buf[:, self._pos]
        self._pos += 1
        out = u + self.e_tilde @ self.L.T - zeta
        self.e_tilde = self.e_tilde @ self.F_cl.T + zeta @ self.B.T
        return out


def start_runtime(plan, m: StateSpaceModel, d: KalmanDesign, rngs=None) -> AttackRuntime:
    """Runtime for ``plan`` with ``e_tilde_1 = 0``.

    ``rngs`` is a generator or a list of generators (one per run). By default
    a single generator seeded from ``plan.seed`` is used. Plans that inject
    nothing pass the nominal input through unchanged.
    """
    if not (plan is None or isinstance(plan, (NoAttack, AttackPlanA1, AttackPlanA2))):
        raise TypeError(f"unknown plan type {type(plan).__name__}")
    if plan is None or isinstance(plan, NoAttack) or plan.is_null:
        return _IdentityRuntime(plan, m, d, rngs)
    if isinstance(plan, AttackPlanA1):
        return A1Runtime(plan, m, d, rngs)
    return A2Runtime(plan, m, d, rngs)


def a1_next(plan: AttackPlanA1, runtime: AttackRuntime, u):
    """Attacked input ``u + phi`` for the current step."""
    return runtime.step(u)


def a2_next(plan: AttackPlanA2, runtime: AttackRuntime, u):
    """Attacked input ``u + L e_tilde - zeta`` for the current step."""
    return runtime.step(u)
