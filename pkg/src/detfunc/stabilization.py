"""Rank-one feedback for ``u_t = nu u_xx - a(x) u`` with Dirichlet conditions.

The unstable block (eigenvalues ``mu >= 0``) is brought to companion form with
the cyclic vector ``e = (1, ..., 1)`` in eigen-coordinates; a feedback
``(l, v) w`` then moves its spectrum to any prescribed real targets.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh_tridiagonal, expm

from .lab import fit_decay
from .spectral import ModelError, NumericalBlowupError

MAX_BLOCK = 8


class DesignError(RuntimeError):
    """Pole placement failed its own verification."""

    def __init__(self, message: str, open_spectrum=None, closed_spectrum=None):
        super().__init__(message)
        self.open_spectrum = open_spectrum
        self.closed_spectrum = closed_spectrum


@dataclass(frozen=True, eq=False)
class SturmSpec:
    nu: float = 1.0
    potential: object = 0.0
    domain_length: float = math.pi
    m_grid: int = 128

    def __post_init__(self):
        if not self.nu > 0:
            raise ModelError("nu must be positive")
        if self.m_grid < 8:
            raise ModelError("grid size must be at least 8")
        if not self.domain_length > 0:
            raise ModelError("domain_length must be positive")
        a = self.potential_values()
        if not np.all(np.isfinite(a)):
            raise ModelError("potential must be finite")

    @property
    def h(self) -> float:
        return self.domain_length / (self.m_grid + 1)

    @property
    def x(self) -> np.ndarray:
        return self.h * np.arange(1, self.m_grid + 1)

    def potential_values(self) -> np.ndarray:
        a = self.potential
        if callable(a):
            return np.asarray(a(self.x), dtype=float) * np.ones(self.m_grid)
        a = np.asarray(a, dtype=float)
        if a.ndim == 0:
            return np.full(self.m_grid, float(a))
        if a.shape != (self.m_grid,):
            raise ModelError("potential must be a scalar or have one value per grid point")
        return a

    def inner(self, u, v) -> float:
        """Discrete version of ``(2 / L) int u v``."""
        return 2.0 * self.h / self.domain_length * float(np.dot(u, v))


def operator_diagonals(spec: SturmSpec) -> tuple[np.ndarray, np.ndarray]:
    """Diagonal and off-diagonal of the central-difference ``nu d^2/dx^2 - a``."""
    h2 = spec.h ** 2
    d = -2.0 * spec.nu / h2 - spec.potential_values()
    e = np.full(spec.m_grid - 1, spec.nu / h2)
    return d, e


def eigensolve(spec: SturmSpec) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (nonincreasing) and eigenvectors (columns, orthonormal for :meth:`SturmSpec.inner`)."""
    d, e = operator_diagonals(spec)
    try:
        mu, V = eigh_tridiagonal(d, e)
    except np.linalg.LinAlgError as exc:
        raise RuntimeError(f"eigensolver did not converge: {exc}") from exc
    order = np.argsort(mu)[::-1]
    mu, V = mu[order], V[:, order]
    V = V / math.sqrt(2.0 * spec.h / spec.domain_length)
    # fix signs so that each eigenvector starts positive
    s = np.sign(V[0])
    s[s == 0] = 1.0
    return mu, V * s


def spectral_eigenvalues(spec: SturmSpec, n_modes: int = 64, n_quad: int = 2048) -> np.ndarray:
    """Cross-check: Galerkin matrix in the sine basis, eigenvalues nonincreasing."""
    L = spec.domain_length
    n = np.arange(1, n_modes + 1)
    x = (np.arange(n_quad) + 0.5) * L / n_quad
    if callable(spec.potential):
        a = np.asarray(spec.potential(x), dtype=float) * np.ones(n_quad)
    else:
        a0 = np.asarray(spec.potential, dtype=float)
        if a0.ndim == 0:
            a = np.full(n_quad, float(a0))
        else:
            a = np.interp(x, spec.x, a0)
    S = np.sin(np.outer(x, n * np.pi / L))
    G = (2.0 / n_quad) * (S.T * a) @ S
    Amat = -np.diag(spec.nu * (n * np.pi / L) ** 2) - G
    return np.sort(np.linalg.eigvalsh(Amat))[::-1]


def count_unstable(eigenvalues) -> int:
    """Number of eigenvalues ``>= 0`` (marginal modes count as unstable)."""
    return int(np.sum(np.asarray(eigenvalues, dtype=float) >= 0.0))


def char_coeffs(roots) -> np.ndarray:
    """``alpha`` with ``prod (s - r) = s^N - alpha_N s^(N-1) - ... - alpha_1``."""
    p = np.poly(np.asarray(roots, dtype=float))
    return -p[1:][::-1]


def cyclic_basis(mu, alpha) -> np.ndarray:
    """Columns ``s_1..s_N`` with ``s_N = e`` and ``s_{j-1} = A s_j - alpha_j e``.

    In this basis ``A`` has companion form with ``alpha`` in its last row and
    ones on the superdiagonal.
    """
    N = len(mu)
    A = np.diag(mu)
    e = np.ones(N)
    S = np.zeros((N, N))
    S[:, N - 1] = e
    for j in range(N - 1, 0, -1):
        S[:, j - 1] = A @ S[:, j] - alpha[j] * e
    return S


@dataclass
class FeedbackDesign:
    l: np.ndarray
    w: np.ndarray
    open_spectrum: np.ndarray
    target_spectrum: np.ndarray
    closed_spectrum_check: np.ndarray
    companion_gains: np.ndarray = field(default_factory=lambda: np.zeros(0))
    checks: dict = field(default_factory=dict)

    @property
    def N(self) -> int:
        return int(self.open_spectrum.size)

    def closed_matrix(self) -> np.ndarray:
        return np.diag(self.open_spectrum) + np.outer(self.w, self.l)

    def summary(self) -> dict:
        return {"N": self.N, "l": self.l, "w": self.w, "open_spectrum": self.open_spectrum,
                "target_spectrum": self.target_spectrum,
                "closed_spectrum": self.closed_spectrum_check,
                "companion_gains": self.companion_gains, "checks": self.checks}


def place_poles(open_spectrum, target_spectrum, tol: float = 1e-8) -> FeedbackDesign:
    """Rank-one feedback ``w l^T`` moving ``diag(mu)`` to the target spectrum.

    ``w = s_N = e``. With companion gains ``l_c = alpha' - alpha`` the
    eigen-coordinate gain is ``l = S^{-T} l_c``.
    """
    mu = np.asarray(open_spectrum, dtype=float).reshape(-1)
    tgt = np.asarray(target_spectrum, dtype=float).reshape(-1)
    N = mu.size
    if tgt.size != N:
        raise ModelError(f"{tgt.size} targets for {N} open eigenvalues")
    if N == 0:
        z = np.zeros(0)
        return FeedbackDesign(z, z, z, z, z, z, {"empty": True})
    if N > MAX_BLOCK:
        raise ModelError(f"unstable block of size {N} exceeds the cap of {MAX_BLOCK}")
    if np.any(np.abs(np.subtract.outer(mu, mu))[~np.eye(N, dtype=bool)] < 1e-12):
        raise ModelError("repeated open eigenvalues: no cyclic vector exists")
    if not np.all(np.isfinite(tgt)):
        raise ModelError("targets must be finite reals")
    a_open = char_coeffs(mu)
    a_tgt = char_coeffs(tgt)
    S = cyclic_basis(mu, a_open)
    lc = a_tgt - a_open
    l = np.linalg.solve(S.T, lc)
    w = np.ones(N)
    closed = np.diag(mu) + np.outer(w, l)
    eig = np.sort(np.linalg.eigvals(closed).real)[::-1]
    # independent of the eigensolver: characteristic polynomial of the closed loop
    poly_closed = np.poly(closed)
    poly_tgt = np.poly(tgt)
    sv = np.linalg.svd(np.outer(w, l), compute_uv=False)
    Sinv = np.linalg.inv(S)
    ctrb = np.column_stack([mu ** j * w for j in range(N)])
    checks = {
        "char_poly_residual": float(np.max(np.abs(poly_closed - poly_tgt))),
        "rank_one_ratio": float(sv[1] / sv[0]) if N > 1 and sv[0] > 0 else 0.0,
        "basis_roundtrip": float(np.max(np.abs(S @ Sinv - np.eye(N)))),
        "basis_condition": float(np.linalg.cond(S)),
        "controllability_rank": int(np.linalg.matrix_rank(ctrb)),
        "controllability_condition": float(np.linalg.cond(ctrb)),
    }
    tsorted = np.sort(tgt)[::-1]
    err = float(np.max(np.abs(eig - tsorted)))
    checks["spectrum_error"] = err
    if err > tol * max(1.0, float(np.max(np.abs(tgt)))):
        raise DesignError(f"closed-loop spectrum misses targets by {err:.3g}", mu, eig)
    return FeedbackDesign(l, w, mu, tgt, eig, lc, checks)


@dataclass
class ClosedLoopReport:
    times: np.ndarray
    norm: np.ndarray
    rate: float
    r_squared: float
    expected_rate: float
    coeffs: np.ndarray | None = None

    def summary(self) -> dict:
        return {"rate": self.rate, "r_squared": self.r_squared,
                "expected_rate": self.expected_rate, "final_norm": float(self.norm[-1])}


def closed_loop_modal(spec: SturmSpec, design: FeedbackDesign, n_modes: int | None = None):
    """Eigenvalues and closed-loop matrix in eigen-coordinates (all modes)."""
    mu, V = eigensolve(spec)
    M = mu.size if n_modes is None else n_modes
    B = np.diag(mu[:M])
    N = design.N
    if N:
        if not np.allclose(mu[:N], design.open_spectrum, rtol=1e-10, atol=1e-10):
            raise ModelError("design does not belong to this operator")
        B[:N, :N] += np.outer(design.w, design.l)
    return mu, V, B


def verify_closed_loop(spec: SturmSpec, design: FeedbackDesign, u0, t_end: float = 10.0,
                       dt: float = 0.01, feedback: bool = True) -> ClosedLoopReport:
    """Integrate ``v' = A v + (l, v) w`` exactly on all grid modes and fit the decay rate.

    ``u0`` is given on the grid (values at interior points).
    """
    mu, V, B = closed_loop_modal(spec, design)
    if not feedback:
        B = np.diag(mu)
    u0 = np.asarray(u0, dtype=float).reshape(-1)
    c = 2.0 * spec.h / spec.domain_length * (V.T @ u0)
    N = design.N
    n = int(math.floor(t_end / dt + 1e-9))
    # unstable block is coupled; the rest is diagonal
    P = expm(B[:N, :N] * dt) if N else np.zeros((0, 0))
    D = np.exp(mu[N:] * dt)
    out = np.empty((n + 1, mu.size))
    out[0] = c
    for i in range(n):
        c = np.concatenate([P @ c[:N], D * c[N:]])
        if not np.all(np.isfinite(c)):
            raise NumericalBlowupError((i + 1) * dt, "closed loop diverged")
        out[i + 1] = c
    times = dt * np.arange(n + 1)
    norm = np.linalg.norm(out, axis=1)
    fit = fit_decay(times, norm)
    slow = [-float(np.max(design.target_spectrum))] if N else []
    if mu.size > N:
        slow.append(-float(mu[N]))
    expected = min(slow) if slow else float("nan")
    return ClosedLoopReport(times, norm, fit.rate, fit.r_squared, expected, out)
