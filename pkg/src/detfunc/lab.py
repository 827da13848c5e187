"""Pair experiments, nudging and separation scans.

A pair experiment asks whether agreement of the observables along two
trajectories comes with convergence of the trajectories themselves; nudging
recovers a trajectory from its low modes (or from a delay reconstruction of
them).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from . import io
from .functionals import FunctionalSpec, evaluate_all
from .spectral import (ModelError, NumericalBlowupError, ProblemSpec, SpectralField,
                       Stepper, Trajectory, n_steps_for)

VERDICTS = ("determining_observed", "not_determining", "inconclusive")


@dataclass(frozen=True)
class DecayFit:
    """Least-squares fit ``log gap ~ intercept - rate * t`` on a tail window."""

    rate: float
    intercept: float
    r_squared: float
    n_points: int
    t_start: float
    t_end: float

    @property
    def efolds(self) -> float:
        return self.rate * (self.t_end - self.t_start) if self.n_points else 0.0

    def as_dict(self) -> dict:
        return {"rate": self.rate, "intercept": self.intercept, "r_squared": self.r_squared,
                "n_points": self.n_points, "t_start": self.t_start, "t_end": self.t_end}


def fit_decay(times, gap, tail_fraction: float = 0.5, floor: float = 1e-14,
              noise_floor: float = 1e-11) -> DecayFit:
    """Fit an exponential rate to the last ``tail_fraction`` of the resolved samples.

    Samples after the gap first drops below ``noise_floor`` are round-off and
    are left out; ``floor`` guards the logarithm.
    """
    t = np.asarray(times, dtype=float)
    g = np.maximum(np.asarray(gap, dtype=float), floor)
    below = np.nonzero(g < noise_floor)[0]
    stop = int(below[0]) if below.size else g.size
    start = int(math.floor(stop * (1.0 - tail_fraction)))
    t, y = t[start:stop], np.log(g[start:stop])
    if t.size < 3:
        nan = float("nan")
        return DecayFit(nan, nan, nan, int(t.size), float(t[0]) if t.size else nan,
                        float(t[-1]) if t.size else nan)
    A = np.column_stack([np.ones_like(t), t])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 0.0
    return DecayFit(float(-coef[1]), float(coef[0]), r2, int(t.size), float(t[0]), float(t[-1]))


@dataclass(frozen=True)
class VerdictRule:
    """Thresholds turning gap series into a verdict."""

    r2_min: float = 0.99
    min_efolds: float = 1.0
    functional_tol: float = 1e-6
    stall_ratio: float = 0.5
    noise_floor: float = 1e-11

    def decays(self, fit: DecayFit) -> bool:
        return (fit.n_points >= 3 and fit.rate > 0 and fit.r_squared >= self.r2_min
                and fit.efolds >= self.min_efolds)


def classify(fit: DecayFit, state_gap, functional_gap=None,
             rule: VerdictRule = VerdictRule()) -> str:
    """Verdict for one pair of gap series.

    ``determining_observed``: the state gap decays exponentially.
    ``not_determining``: the observables agree asymptotically while the
    state gap stalls. Everything else is ``inconclusive``.
    """
    s = np.asarray(state_gap, dtype=float)
    if s[0] <= rule.noise_floor:
        return "inconclusive"
    if rule.decays(fit):
        return "determining_observed"
    stalled = s[-1] >= rule.stall_ratio * np.min(s[: max(1, s.size // 2)])
    if functional_gap is None:
        agree = True
    else:
        f = np.asarray(functional_gap, dtype=float)
        agree = f.size == 0 or f[-1] <= rule.functional_tol * max(1.0, float(np.max(f)))
    if stalled and agree:
        return "not_determining"
    return "inconclusive"


# ---------------------------------------------------------------------------
# Pair experiments


@dataclass
class PairExperimentReport:
    times: np.ndarray
    functional_gap: np.ndarray
    state_gap: np.ndarray
    fit: DecayFit
    verdict: str
    coupling: str = "none"
    n_functionals: int = 0

    @property
    def decay_rate_estimate(self) -> float:
        return self.fit.rate

    def columns(self) -> dict:
        return {"t": self.times, "functional_gap": self.functional_gap,
                "state_gap": self.state_gap}

    def summary(self, config: dict | None = None) -> dict:
        out = {"verdict": self.verdict, "beta_hat": self.fit.rate,
               "r_squared": self.fit.r_squared, "fit": self.fit.as_dict(),
               "coupling": self.coupling, "n_functionals": self.n_functionals,
               "final_state_gap": float(self.state_gap[-1]),
               "final_functional_gap": float(self.functional_gap[-1])}
        if config is not None:
            out["config"] = config
        return out

    def to_csv(self, path):
        return io.write_columns(path, self.columns())

    def to_json(self, path, config: dict | None = None):
        return io.write_json(path, self.summary(config))


def _observation_projector(functionals, spec: ProblemSpec):
    """Return ``fix(v, u)`` imposing ``F_i(v) = F_i(u)`` by orthogonal projection."""
    if not functionals:
        return None
    if not all(F.is_linear for F in functionals):
        raise ModelError("observed coupling needs linear functionals")
    W = np.stack([F.weights(spec.m_grid, spec.basis, spec.domain_length) for F in functionals])
    pinv = np.linalg.pinv(W)

    def fix(v, u):
        return v - pinv @ (W @ (v - u))

    return fix


def run_pair_experiment(spec: ProblemSpec, functionals, u0: SpectralField, v0: SpectralField,
                        t_end: float, dt: float = 1e-2, coupling: str = "none",
                        rule: VerdictRule = VerdictRule(),
                        scheme: str = "exp_euler") -> PairExperimentReport:
    """Co-integrate two trajectories and record observable and state gaps.

    ``coupling="none"`` evolves ``u`` and ``v`` independently. With
    ``coupling="observed"`` the observed values of ``v`` are overwritten by
    those of ``u`` after every step (orthogonal projection onto
    ``{F_i(v) = F_i(u)}``), which for Fourier modes gives ``P_N v = P_N u``.
    """
    if coupling not in ("none", "observed"):
        raise ModelError(f"unknown coupling {coupling!r}")
    spec.check(u0)
    spec.check(v0)
    functionals = list(functionals)
    stepper = Stepper(spec, dt, scheme)
    fix = _observation_projector(functionals, spec) if coupling == "observed" else None
    n = n_steps_for(t_end, dt)
    U = np.empty((n + 1, spec.m_grid))
    V = np.empty_like(U)
    u, v = u0.coeffs.copy(), v0.coeffs.copy()
    if fix is not None:
        v = fix(v, u)
    U[0], V[0] = u, v
    for i in range(n):
        u = stepper.advance(u)
        v = stepper.advance(v)
        if fix is not None:
            v = fix(v, u)
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise NumericalBlowupError((i + 1) * dt)
        U[i + 1], V[i + 1] = u, v
    times = dt * np.arange(n + 1)
    FU = evaluate_all(functionals, U, spec.basis, spec.domain_length)
    FV = evaluate_all(functionals, V, spec.basis, spec.domain_length)
    fgap = np.max(np.abs(FU - FV), axis=1) if functionals else np.zeros(n + 1)
    sgap = np.linalg.norm(U - V, axis=1)
    fit = fit_decay(times, sgap, noise_floor=rule.noise_floor)
    verdict = classify(fit, sgap, fgap, rule)
    return PairExperimentReport(times, fgap, sgap, fit, verdict, coupling, len(functionals))


# ---------------------------------------------------------------------------
# Nudging


@dataclass(frozen=True)
class NudgeConfig:
    K: float
    N: int
    source: str = "modes"

    def __post_init__(self):
        if not self.K >= 0:
            raise ModelError("gain K must be nonnegative")
        if self.N < 1:
            raise ModelError("observed mode count N must be >= 1")
        if self.source not in ("modes", "theta_reconstruction"):
            raise ModelError(f"unknown nudging source {self.source!r}")


@dataclass
class NudgeResult:
    times: np.ndarray
    state_gap: np.ndarray
    fit: DecayFit
    beta_bound: float
    verdict: str
    warnings: list = field(default_factory=list)
    reconstruction_error: np.ndarray | None = None

    @property
    def rate(self) -> float:
        return self.fit.rate

    def bound(self) -> np.ndarray:
        """``||v(0) - u(0)|| exp(-beta_hat t)`` on the shared grid."""
        t = self.times - self.times[0]
        return self.state_gap[0] * np.exp(-self.fit.rate * t)

    def columns(self) -> dict:
        cols = {"t": self.times, "state_gap": self.state_gap, "bound": self.bound()}
        if self.reconstruction_error is not None:
            cols["reconstruction_error"] = self.reconstruction_error
        return cols

    def summary(self, config: dict | None = None) -> dict:
        out = {"verdict": self.verdict, "beta_hat": self.fit.rate,
               "r_squared": self.fit.r_squared, "beta_bound": self.beta_bound,
               "fit": self.fit.as_dict(), "warnings": list(self.warnings),
               "initial_gap": float(self.state_gap[0]),
               "final_gap": float(self.state_gap[-1])}
        if self.reconstruction_error is not None:
            out["max_reconstruction_error"] = float(np.max(self.reconstruction_error))
            out["final_reconstruction_error"] = float(self.reconstruction_error[-1])
        if config is not None:
            out["config"] = config
        return out


def nudging_preconditions(spec: ProblemSpec, cfg: NudgeConfig) -> list[str]:
    """Messages for every violated sufficient condition (empty if all hold)."""
    lam, L, a = spec.eigenvalues, spec.lipschitz_L, spec.alpha
    msgs = []
    if cfg.N >= lam.size:
        msgs.append(f"N={cfg.N} leaves no unobserved modes in a {lam.size}-mode model")
    elif not lam[cfg.N] ** (1 - a) > L:
        msgs.append(f"lambda_(N+1)^(1-alpha)={lam[cfg.N] ** (1 - a):.6g} <= L={L:.6g}")
    need = L * lam[min(cfg.N, lam.size) - 1] ** a
    if not cfg.K > need:
        msgs.append(f"K={cfg.K:.6g} <= L*lambda_N^alpha={need:.6g}")
    return msgs


def _assimilate(spec: ProblemSpec, targets: np.ndarray, dt: float, K: float,
                v0: SpectralField, t0: float = 0.0) -> Trajectory:
    """Integrate ``dv/dt + A v - f(v) + K (P_N v - target(t)) = g`` on the target grid.

    ``targets[i]`` holds the observed low modes at sample ``i``. The feedback
    term is explicit like ``f``, so a copy started on the observed trajectory
    reproduces its steps exactly.
    """
    spec.check(v0)
    N = targets.shape[1]
    if K * dt > 1.0:
        warnings.warn(f"K*dt={K * dt:.3g} > 1: explicit feedback term may be unstable",
                      RuntimeWarning, stacklevel=3)
    stepper = Stepper(spec, dt)
    n = targets.shape[0]
    out = np.empty((n, spec.m_grid))
    v = v0.coeffs.copy()
    out[0] = v
    extra = np.zeros(spec.m_grid)
    for i in range(n - 1):
        extra[:N] = K * (targets[i] - v[:N])
        v = stepper.advance(v, extra)
        if not np.all(np.isfinite(v)):
            raise NumericalBlowupError(t0 + (i + 1) * dt)
        out[i + 1] = v
    return Trajectory(out, dt, t0, spec.basis, spec.domain_length)


def _gap_report(times, gap, rule: VerdictRule, msgs, recon=None) -> NudgeResult:
    fit = fit_decay(times, gap, noise_floor=rule.noise_floor)
    t = times - times[0]
    with np.errstate(divide="ignore", invalid="ignore"):
        ok = (t > 0) & (gap > 0) & (gap[0] > 0)
        rates = -np.log(gap[ok] / gap[0]) / t[ok]
    beta_bound = float(np.min(rates)) if rates.size else float("nan")
    verdict = classify(fit, gap, None, rule)
    return NudgeResult(times, gap, fit, beta_bound, verdict, list(msgs), recon)


def nudge(spec: ProblemSpec, truth: Trajectory, cfg: NudgeConfig, v0: SpectralField,
          rule: VerdictRule = VerdictRule()) -> tuple[Trajectory, NudgeResult]:
    """Recover ``truth`` from its first ``cfg.N`` modes by linear feedback of gain ``K``."""
    msgs = nudging_preconditions(spec, cfg)
    for m in msgs:
        warnings.warn(f"nudging precondition violated: {m}", RuntimeWarning, stacklevel=2)
    targets = np.ascontiguousarray(truth.states[:, : cfg.N])
    v = _assimilate(spec, targets, truth.dt, cfg.K, v0, truth.t0)
    gap = np.linalg.norm(v.states - truth.states, axis=1)
    return v, _gap_report(truth.times, gap, rule, msgs)


def delay_windows(observations, k: int, lag: int) -> np.ndarray:
    """Rows ``(Z(t - k tau), ..., Z(t - tau))`` for every ``t`` with a full history."""
    z = np.asarray(observations, dtype=float).reshape(-1)
    n = z.size - k * lag
    if k < 1 or lag < 1:
        raise ModelError("k and lag must be >= 1")
    if n < 1:
        raise ModelError(f"{z.size} observations do not cover a window of {k} x {lag} steps")
    idx = np.arange(n)[:, None] + lag * np.arange(k)[None, :]
    return z[idx]


def takens_nudge(spec: ProblemSpec, observations, theta_N, cfg: NudgeConfig,
                 v0: SpectralField, k: int, lag: int, dt: float, t0: float = 0.0,
                 truth: Trajectory | None = None,
                 rule: VerdictRule = VerdictRule()) -> tuple[Trajectory, NudgeResult]:
    """Nudging with ``P_N u(t)`` replaced by ``theta_N`` of the scalar delay window.

    ``observations[i]`` is ``F(u(t0 + i dt))`` and ``tau = lag * dt``. The
    assimilation starts at ``t0 + k tau``, where ``v0`` is placed. ``theta_N``
    is any object with ``predict(windows) -> (n, N)``. If ``truth`` (sampled on
    the observation grid) is given, the state gap and the reconstruction error
    of ``theta_N`` are reported.
    """
    if len(np.atleast_1d(observations)) == 0:
        raise ModelError("empty observation window")
    windows = delay_windows(observations, k, lag)
    targets = np.asarray(theta_N.predict(windows), dtype=float).reshape(windows.shape[0], -1)
    if targets.shape[1] != cfg.N:
        raise ModelError(f"theta_N returns {targets.shape[1]} modes, expected N={cfg.N}")
    msgs = nudging_preconditions(spec, cfg)
    for m in msgs:
        warnings.warn(f"nudging precondition violated: {m}", RuntimeWarning, stacklevel=2)
    start = k * lag
    v = _assimilate(spec, np.ascontiguousarray(targets), dt, cfg.K, v0, t0 + start * dt)
    if truth is None:
        times = v.times
        nan = float("nan")
        empty = DecayFit(nan, nan, nan, 0, nan, nan)
        return v, NudgeResult(times, np.full(times.size, nan), empty, nan, "inconclusive", msgs)
    ref = truth.states[start:start + len(v)]
    if ref.shape[0] != len(v):
        raise ModelError("truth trajectory shorter than the observation series")
    gap = np.linalg.norm(v.states - ref, axis=1)
    recon = np.linalg.norm(targets - ref[:, : cfg.N], axis=1)
    return v, _gap_report(v.times, gap, rule, msgs, recon)


# ---------------------------------------------------------------------------
# Separation on sampled trajectories


@dataclass
class SeparationReport:
    n_pairs: int
    worst_ratio: float
    worst_pair: tuple
    min_functional_gap: float
    indistinguishable: list
    tol: float
    state_tol: float

    @property
    def separation_failure(self) -> bool:
        return any(p["state_distance"] > self.state_tol for p in self.indistinguishable)

    def summary(self) -> dict:
        return {"n_pairs": self.n_pairs, "worst_ratio": self.worst_ratio,
                "worst_pair": list(self.worst_pair),
                "min_functional_gap": self.min_functional_gap,
                "n_indistinguishable": len(self.indistinguishable),
                "separation_failure": self.separation_failure,
                "indistinguishable": self.indistinguishable[:20],
                "tol": self.tol, "state_tol": self.state_tol}


def separation_scan(functionals, trajectories, tol: float = 1e-6, state_tol: float = 1e-6,
                    eps_guard: float = 1e-12) -> SeparationReport:
    """Look for pairs of sampled trajectories that the observables cannot tell apart.

    For every pair the functional distance is ``sup_t max_i |F_i(u) - F_i(v)|``
    and the state distance ``sup_t ||u - v||``. Pairs with functional distance
    below ``tol`` are listed; the worst ratio state/functional distance is
    reported.
    """
    trajs = list(trajectories)
    if len(trajs) < 2:
        raise ModelError("need at least two trajectories")
    shape = trajs[0].states.shape
    if any(tr.states.shape != shape for tr in trajs):
        raise ModelError("trajectories must share length and state size")
    S = np.stack([tr.states for tr in trajs])
    Fs = np.stack([evaluate_all(functionals, tr.states, tr.basis, tr.domain_length)
                   for tr in trajs])
    n = len(trajs)
    worst, worst_pair, min_fgap = -1.0, (0, 1), math.inf
    found = []
    for i in range(n - 1):
        dF = Fs[i + 1:] - Fs[i]
        fd = np.max(np.abs(dF), axis=(1, 2)) if dF.shape[2] else np.zeros(n - i - 1)
        sd = np.max(np.linalg.norm(S[i + 1:] - S[i], axis=2), axis=1)
        ratio = sd / (fd + eps_guard)
        j = int(np.argmax(ratio))
        if ratio[j] > worst:
            worst, worst_pair = float(ratio[j]), (i, i + 1 + j)
        min_fgap = min(min_fgap, float(np.min(fd)))
        for jj in np.nonzero(fd < tol)[0]:
            found.append({"pair": [i, i + 1 + int(jj)], "functional_distance": float(fd[jj]),
                          "state_distance": float(sd[jj])})
    return SeparationReport(n * (n - 1) // 2, worst, worst_pair, min_fgap, found, tol, state_tol)


# ---------------------------------------------------------------------------
# Four-dimensional oscillator system (two uncoupled harmonic oscillators)


def oscillator_matrix() -> np.ndarray:
    """``x' = y, y' = -x, z' = u, u' = -z`` as a skew-symmetric block matrix."""
    J = np.array([[0.0, 1.0], [-1.0, 0.0]])
    B = np.zeros((4, 4))
    B[:2, :2] = J
    B[2:, 2:] = J
    return B


def integrate_linear(B, x0, t_end: float, dt: float, t0: float = 0.0) -> Trajectory:
    """Exact stepping of ``x' = B x`` with the propagator ``expm(B dt)``."""
    B = np.asarray(B, dtype=float)
    P = expm(B * dt)
    n = n_steps_for(t_end, dt)
    out = np.empty((n + 1, B.shape[0]))
    out[0] = np.asarray(x0, dtype=float)
    for i in range(n):
        out[i + 1] = P @ out[i]
    return Trajectory(out, dt, t0, "euclidean", 1.0)


def oscillator_orbit(A: float, B: float, phi1: float, phi2: float, times) -> np.ndarray:
    """Closed-form solution ``(A sin, A cos, B sin, B cos)`` of the oscillator system."""
    t = np.asarray(times, dtype=float)
    a, b = t + phi1, t + phi2
    return np.column_stack([A * np.sin(a), A * np.cos(a), B * np.sin(b), B * np.cos(b)])


def blind_orbit(weights, amplitude: float = 1.0, phi1: float = 0.0):
    """Nonzero orbit ``(A, B, phi1, phi2)`` on which ``weights . X(t)`` vanishes identically.

    With ``a sin s + b cos s = hypot(a, b) sin(s + atan2(b, a))`` the two
    oscillator contributions cancel when their amplitudes are balanced and
    their phases differ by pi.
    """
    al, be, ga, de = (float(w) for w in weights)
    r1, p1 = math.hypot(al, be), math.atan2(be, al)
    r2, p2 = math.hypot(ga, de), math.atan2(de, ga)
    if r1 == 0 and r2 == 0:
        raise ModelError("zero functional")
    A, B = r2, r1
    s = amplitude / math.hypot(A, B)
    return A * s, B * s, phi1, phi1 + p1 - p2 + math.pi


def trig_residual(weights, orbit, times) -> float:
    """``sup_t |weights . X(t)|`` evaluated from the closed form."""
    X = oscillator_orbit(*orbit, times)
    return float(np.max(np.abs(X @ np.asarray(weights, dtype=float))))
