"""Plant representation and the structural properties the attacks rely on."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import DimensionMismatch, NoisePDViolation
from .matnum import as_matrix, matrix_rank


def _frozen(arr):
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class StateSpaceModel:
    """Plant ``x+ = A x + B u + w``, ``y = C x + v`` with Gaussian noise."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    Sigma_w: np.ndarray
    Sigma_v: np.ndarray
    name: str = ""

    def __post_init__(self):
        A = as_matrix(self.A, "A")
        n = A.shape[0]
        A = as_matrix(A, "A", (n, n))
        B = as_matrix(self.B, "B", (n, None))
        C = as_matrix(self.C, "C", (None, n))
        Sw = as_matrix(self.Sigma_w, "Sigma_w", (n, n))
        Sv = as_matrix(self.Sigma_v, "Sigma_v", (C.shape[0], C.shape[0]))
        for attr, val in zip(("A", "B", "C", "Sigma_w", "Sigma_v"), (A, B, C, Sw, Sv)):
            object.__setattr__(self, attr, _frozen(val))
        _check_pd(self.Sigma_w, "Sigma_w")
        _check_pd(self.Sigma_v, "Sigma_v")

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_u(self) -> int:
        return self.B.shape[1]

    @property
    def n_y(self) -> int:
        return self.C.shape[0]

    def matrices(self) -> dict:
        return {"A": self.A, "B": self.B, "C": self.C, "Sigma_w": self.Sigma_w, "Sigma_v": self.Sigma_v}


def _check_pd(S, name):
    if np.abs(S - S.T).max(initial=0.0) > 1e-12 * max(1.0, np.abs(S).max()):
        raise NoisePDViolation(f"{name} is not symmetric")
    if np.linalg.eigvalsh(S).min() <= 0:
        raise NoisePDViolation(f"{name} is not positive definite")


@dataclass
class StructureReport:
    invariant_zeros: list
    right_invertible: bool
    relative_delay: int | None
    warnings: list = field(default_factory=list)


def _triple(system, B=None, C=None):
    if isinstance(system, StateSpaceModel):
        return system.A, system.B, system.C
    F = as_matrix(system, "F")
    n = F.shape[0]
    return as_matrix(F, "F", (n, n)), as_matrix(B, "B", (n, None)), as_matrix(C, "C", (None, n))


def markov_params(F, B, C, k: int) -> list:
    """Return ``[C B, C F B, ..., C F^{k-1} B]``."""
    if k < 1:
        raise ValueError("k must be at least 1")
    F, B, C = _triple(F, B, C)
    out = []
    X = B
    for _ in range(k):
        out.append(C @ X)
        X = F @ X
    return out


def block_toeplitz(markov: list, d: int) -> np.ndarray:
    """Lower block-triangular map from ``(u_0..u_{d-1})`` to ``(y_1..y_d)``.

    Block ``(i, j)`` is ``markov[i - j]`` for ``j <= i`` and zero above.
    """
    ny, nu = markov[0].shape
    T = np.zeros((d * ny, d * nu))
    for i in range(d):
        for j in range(i + 1):
            T[i * ny:(i + 1) * ny, j * nu:(j + 1) * nu] = markov[i - j]
    return T


def is_right_invertible(system, B=None, C=None) -> tuple:
    """Decide right invertibility from Toeplitz rank growth.

    The output block appended at horizon ``d`` is independently assignable
    exactly when ``rank T_d - rank T_{d-1} = N_y``. The increments are
    non-decreasing and settle within ``N_x + 1`` steps, so the system is right
    invertible iff the increment reaches ``N_y`` by then. The first such ``d``
    is the relative delay of the inverse.

    Returns
    -------
    (bool, int or None)
    """
    F, B, C = _triple(system, B, C)
    n, nu, ny = F.shape[0], B.shape[1], C.shape[0]
    if nu < ny:
        return False, None
    markov = markov_params(F, B, C, n + 1)
    prev = 0
    for d in range(1, n + 2):
        r = matrix_rank(block_toeplitz(markov, d))
        if r - prev == ny:
            return True, d
        prev = r
    return False, None


def _pencil(A, B, C):
    n, nu, ny = A.shape[0], B.shape[1], C.shape[0]
    M = np.block([[A, B], [-C, np.zeros((ny, nu))]])
    E = np.zeros((n + ny, n + nu))
    E[:n, :n] = np.eye(n)
    return M, E


def rosenbrock(A, B, C, z) -> np.ndarray:
    """Evaluate ``[[zI - A, -B], [C, 0]]`` at a (complex) point ``z``."""
    M, E = _pencil(A, B, C)
    return z * E - M


def normal_rank(A, B, C, samples=20, seed=0) -> int:
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=samples) + 1j * rng.normal(size=samples)
    return max(matrix_rank(rosenbrock(A, B, C, z)) for z in pts)


def _finite_gen_eigs(M, E):
    w = linalg.eigvals(M, E, homogeneous_eigvals=True)
    alpha, beta = w
    scale = np.maximum(np.abs(alpha), np.abs(beta))
    ok = np.abs(beta) > 1e-9 * np.where(scale > 0, scale, 1.0)
    return alpha[ok] / beta[ok]


def invariant_zeros(system, B=None, C=None) -> list:
    """Finite points where the Rosenbrock pencil drops below its normal rank.

    Square pencils go straight to the QZ algorithm. Non-square pencils are
    squared down by a random projection; the candidates this produces are kept
    only if the original pencil actually loses rank there. A pencil that is
    rank deficient everywhere yields an empty list (``validate`` warns).
    """
    A, B, C = _triple(system, B, C)
    n, nu, ny = A.shape[0], B.shape[1], C.shape[0]
    full = n + min(nu, ny)
    nrank = normal_rank(A, B, C)
    if nrank < full:
        return []
    M, E = _pencil(A, B, C)
    if nu == ny:
        cands = _finite_gen_eigs(M, E)
        return sorted((complex(z) for z in cands), key=lambda z: (z.real, z.imag))
    rng = np.random.default_rng(12345)
    if ny > nu:
        R = rng.normal(size=(n + nu, n + ny))
        cands = _finite_gen_eigs(R @ M, R @ E)
    else:
        R = rng.normal(size=(n + nu, n + ny))
        cands = _finite_gen_eigs(M @ R, E @ R)
    zeros = []
    for z in cands:
        s = np.linalg.svd(rosenbrock(A, B, C, z), compute_uv=False)
        if s[nrank - 1] <= 1e-7 * s[0]:
            zeros.append(complex(z))
    return sorted(zeros, key=lambda z: (z.real, z.imag))


def validate(m: StateSpaceModel) -> StructureReport:
    """Check a model and report zeros, right invertibility and relative delay.

    Invariant zeros produce a warning rather than an error; the attack
    constructions assume there are none.
    """
    if not isinstance(m, StateSpaceModel):
        raise TypeError("validate expects a StateSpaceModel")
    # The constructor already enforces shapes and noise PD; re-check in case
    # arrays were swapped in through object.__setattr__.
    _check_pd(m.Sigma_w, "Sigma_w")
    _check_pd(m.Sigma_v, "Sigma_v")
    if m.B.shape[0] != m.n_x or m.C.shape[1] != m.n_x:
        raise DimensionMismatch("inconsistent model dimensions")

    warnings = []
    nrank = normal_rank(m.A, m.B, m.C)
    if nrank < m.n_x + min(m.n_u, m.n_y):
        warnings.append(
            f"Rosenbrock pencil has normal rank {nrank} < {m.n_x + min(m.n_u, m.n_y)}; "
            "the system is degenerate"
        )
    zeros = invariant_zeros(m)
    if zeros:
        warnings.append(
            f"system has {len(zeros)} invariant zero(s); the stealthy-attack results assume none"
        )
    ri, delay = is_right_invertible(m)
    return StructureReport(invariant_zeros=zeros, right_invertible=ri, relative_delay=delay, warnings=warnings)

