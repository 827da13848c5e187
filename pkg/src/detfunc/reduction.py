"""Reconstruction of high modes from the history of low modes.

The high-mode part ``u_-`` solves

    d/dt u_- + A u_- - Q_N f(u_- + u_+) = Q_N g,   u_-(-M) = 0,

driven by a given low-mode history ``u_+`` on ``[-M, 0]``. As ``M`` grows the
value at ``t = 0`` converges (exponentially, when ``L < lambda_{N+1}``) to
the high-mode part of the true state. Only ``alpha = 0`` is supported.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .spectral import (ModelError, ProblemSpec, SpectralField, Stepper, Trajectory,
                       nonlinear_term)


@dataclass(frozen=True, eq=False)
class LowModeHistory:
    """Low-mode samples on ``[-M, 0]``; row ``i`` is the state at ``-M + i dt``.

    Rows are full coefficient vectors whose modes above ``N`` are zero.
    """

    values: np.ndarray
    N: int
    dt: float
    basis: str = "dirichlet_sine"
    domain_length: float = math.pi

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] < 1:
            raise ModelError("history values must be a non-empty 2D array")
        if not 0 <= self.N <= v.shape[1]:
            raise ModelError(f"N={self.N} out of range for {v.shape[1]} modes")
        if not self.dt > 0:
            raise ModelError("dt must be positive")
        if np.any(v[:, self.N:] != 0.0):
            raise ModelError("history has nonzero high modes")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_trajectory(cls, traj: Trajectory, N: int, M: float | None = None,
                        end: int | None = None) -> "LowModeHistory":
        """Low modes of ``traj`` over the window of length ``M`` ending at sample ``end``."""
        end = len(traj) - 1 if end is None else end
        n = end if M is None else int(round(M / traj.dt))
        if n > end or n < 0:
            raise ModelError("trajectory does not cover the requested window")
        v = np.array(traj.states[end - n:end + 1])
        v[:, N:] = 0.0
        return cls(v, N, traj.dt, traj.basis, traj.domain_length)

    @classmethod
    def constant(cls, u: SpectralField, N: int, M: float, dt: float) -> "LowModeHistory":
        n = int(round(M / dt))
        v = np.tile(u.coeffs, (n + 1, 1))
        v[:, N:] = 0.0
        return cls(v, N, dt, u.basis, u.domain_length)

    @property
    def m_grid(self) -> int:
        return self.values.shape[1]

    @property
    def M(self) -> float:
        return (self.values.shape[0] - 1) * self.dt

    @property
    def times(self) -> np.ndarray:
        return -self.M + self.dt * np.arange(self.values.shape[0])

    def tail(self, M: float) -> "LowModeHistory":
        n = int(round(M / self.dt))
        if n > self.values.shape[0] - 1:
            raise ModelError(f"history of length {self.M:g} shorter than M={M:g}")
        return LowModeHistory(self.values[-(n + 1):], self.N, self.dt, self.basis,
                              self.domain_length)

    def append(self, low: np.ndarray) -> "LowModeHistory":
        row = np.zeros(self.m_grid)
        row[: self.N] = np.asarray(low, dtype=float)[: self.N]
        return LowModeHistory(np.vstack([self.values, row]), self.N, self.dt, self.basis,
                              self.domain_length)

    def sample(self, t: float) -> np.ndarray:
        """Piecewise-linear value at time ``t`` in ``[-M, 0]``."""
        s = (t + self.M) / self.dt
        i = min(max(int(math.floor(s)), 0), self.values.shape[0] - 1)
        if i == self.values.shape[0] - 1:
            return self.values[i]
        w = s - i
        return (1.0 - w) * self.values[i] + w * self.values[i + 1]


@dataclass
class PhiResult:
    reconstructed: SpectralField
    M_used: float
    cauchy_residual: float
    reliable: bool = True
    path: np.ndarray | None = None

    def summary(self) -> dict:
        return {"M_used": self.M_used, "cauchy_residual": self.cauchy_residual,
                "reliable": self.reliable,
                "norm": float(np.linalg.norm(self.reconstructed.coeffs))}


def contraction_estimate(spec: ProblemSpec, N: int) -> float:
    """``lambda_{N+1} - L``: contraction rate of the high-mode equation for ``alpha = 0``."""
    if N >= spec.m_grid:
        return math.inf
    return float(spec.eigenvalues[N] - spec.lipschitz_L)


def _check(spec: ProblemSpec, history: LowModeHistory) -> bool:
    if spec.alpha != 0.0:
        raise ModelError("high-mode reconstruction is implemented for alpha = 0 only")
    if history.m_grid != spec.m_grid or history.basis != spec.basis:
        raise ModelError("history does not match the problem")
    ok = contraction_estimate(spec, history.N) > 0
    if not ok:
        warnings.warn(f"lambda_(N+1) <= L for N={history.N}: reconstruction may not converge",
                      RuntimeWarning, stacklevel=3)
    return ok


def _phi_path(spec: ProblemSpec, history: LowModeHistory, M: float,
              substeps: int = 1) -> np.ndarray:
    """High-mode trajectory on the history grid of the last ``M`` time units."""
    h = history.tail(M)
    N = h.N
    dt = h.dt / substeps
    stepper = Stepper(spec, dt)
    high = np.zeros(spec.m_grid, dtype=bool)
    high[N:] = True
    decay, gain = stepper.decay[high], stepper.gain[high]
    g = spec.forcing.coeffs[high]
    n = h.values.shape[0]
    out = np.zeros((n, spec.m_grid))
    w = np.zeros(spec.m_grid)
    for i in range(n - 1):
        for j in range(substeps):
            a = j / substeps
            low = (1.0 - a) * h.values[i] + a * h.values[i + 1] if a else h.values[i]
            full = low + w
            w[high] = decay * w[high] + gain * (nonlinear_term(spec, full)[high] + g)
        out[i + 1] = w
    return out


def solve_phi(spec: ProblemSpec, history: LowModeHistory, M: float | None = None,
              substeps: int = 1, keep_path: bool = False) -> PhiResult:
    """High-mode state at ``t = 0`` reconstructed from the last ``M`` of ``history``.

    The certificate ``cauchy_residual`` is the difference to the solution
    started at ``-M/2``.
    """
    ok = _check(spec, history)
    M = history.M if M is None else float(M)
    path = _phi_path(spec, history, M, substeps)
    half = history.dt * (int(round(M / history.dt)) // 2)
    resid = 0.0
    if half > 0:
        resid = float(np.linalg.norm(path[-1] - _phi_path(spec, history, half, substeps)[-1]))
    u = SpectralField(path[-1], spec.basis, spec.domain_length)
    return PhiResult(u, M, resid, ok, path if keep_path else None)


def linear_phi_exact(spec: ProblemSpec, N: int, M: float) -> SpectralField:
    """``sum_{n>N} q_n / lambda_n (1 - exp(-lambda_n M)) e_n`` for ``f = 0`` and forcing ``q``."""
    lam = spec.eigenvalues
    q = spec.forcing.coeffs
    c = np.zeros(spec.m_grid)
    c[N:] = q[N:] / lam[N:] * -np.expm1(-lam[N:] * M)
    return spec.field(c)


def weighted_sup(path: np.ndarray, times: np.ndarray, beta: float) -> float:
    """``sup_t exp(beta t) ||path(t)||`` for ``t <= 0``."""
    return float(np.max(np.exp(beta * times) * np.linalg.norm(path, axis=1)))


def verify_phi_lipschitz(spec: ProblemSpec, history1: LowModeHistory,
                         history2: LowModeHistory, M: float | None = None,
                         beta_probe: float = 0.0, substeps: int = 1) -> float:
    """Ratio of weighted sup distances of reconstructions and of histories.

    Returns 0 when the histories coincide.
    """
    if (history1.values.shape != history2.values.shape or history1.dt != history2.dt
            or history1.N != history2.N):
        raise ModelError("histories are not on the same grid")
    M = history1.M if M is None else float(M)
    p1 = _phi_path(spec, history1, M, substeps)
    p2 = _phi_path(spec, history2, M, substeps)
    h1, h2 = history1.tail(M), history2.tail(M)
    t = h1.times
    den = weighted_sup(h1.values - h2.values, t, beta_probe)
    num = weighted_sup(p1 - p2, t, beta_probe)
    if den == 0.0:
        return 0.0
    return num / den


def reduced_dde_step(spec: ProblemSpec, history: LowModeHistory, dt: float | None = None,
                     M_min: float | None = None) -> np.ndarray:
    """Advance the low modes by one step of the delayed equation.

    The high modes at the current time are taken from :func:`solve_phi` on
    the whole window. Returns the new low-mode coefficients (length ``N``).
    """
    _check(spec, history)
    if M_min is None:
        rate = contraction_estimate(spec, history.N)
        M_min = 10.0 / rate if rate > 0 else 0.0
    if history.M < M_min - 1e-12:
        raise ModelError(f"history window {history.M:g} shorter than M_min={M_min:g}")
    dt = history.dt if dt is None else dt
    phi0 = solve_phi(spec, history).reconstructed.coeffs
    current = history.values[-1] + phi0
    stepper = Stepper(spec, dt)
    N = history.N
    nl = nonlinear_term(spec, current) + spec.forcing.coeffs
    return stepper.decay[:N] * current[:N] + stepper.gain[:N] * nl[:N]


def run_reduced(spec: ProblemSpec, history: LowModeHistory, n_steps: int,
                window: float | None = None) -> LowModeHistory:
    """Closed-loop iteration of :func:`reduced_dde_step` keeping a sliding window."""
    h = history
    for _ in range(n_steps):
        w = h if window is None else h.tail(min(window, h.M))
        h = h.append(reduced_dde_step(spec, w, M_min=0.0))
    return h
