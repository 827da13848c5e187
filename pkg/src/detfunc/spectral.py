"""Semilinear parabolic model ``du/dt + A u - f(u) = g`` in a truncated eigenbasis.

States are coefficient vectors in an orthonormal eigenbasis of ``A``. For the
two PDE bases the inner product on ``H`` is the rescaled ``L^2`` product
``(u, v) = (2/L) * int_0^L u v dx``, under which

* ``dirichlet_sine``:   e_n(x) = sin(n pi x / L),              n = 1..M
* ``periodic_fourier``: e_0 = 1/sqrt(2), then cos/sin pairs cos(2 pi k x / L),
  sin(2 pi k x / L) for k = 1, 2, ...

are orthonormal, so the ``H`` norm is the plain l2 norm of the coefficients.
A third basis tag, ``euclidean``, is used for finite-dimensional ODE states
that have no spatial grid.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import fft as sfft

BASES = ("dirichlet_sine", "periodic_fourier", "euclidean")
POINTWISE_FUNCTIONS = ("sine", "cubic", "linear")


class ModelError(ValueError):
    """Invalid argument passed to a model operation."""


class AliasingError(ModelError):
    """Collocation grid too coarse for the requested number of modes."""


class NumericalBlowupError(RuntimeError):
    """Non-finite coefficients appeared during time stepping."""

    def __init__(self, time: float, message: str = ""):
        self.time = float(time)
        super().__init__(message or f"non-finite state at t={self.time:.6g}")


# ---------------------------------------------------------------------------
# States


@dataclass(frozen=True, eq=False)
class SpectralField:
    coeffs: np.ndarray
    basis: str = "dirichlet_sine"
    domain_length: float = math.pi

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float, copy=True).reshape(-1)
        if c.size < 1:
            raise ModelError("a field needs at least one coefficient")
        if self.basis not in BASES:
            raise ModelError(f"unknown basis {self.basis!r}")
        if not self.domain_length > 0:
            raise ModelError("domain_length must be positive")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)
        object.__setattr__(self, "domain_length", float(self.domain_length))

    @classmethod
    def zeros(cls, m: int, basis: str = "dirichlet_sine", domain_length: float = math.pi):
        return cls(np.zeros(m), basis, domain_length)

    @classmethod
    def unit(cls, n: int, m: int, basis: str = "dirichlet_sine",
             domain_length: float = math.pi):
        """The basis vector e_n (1-based index)."""
        if not 1 <= n <= m:
            raise ModelError(f"mode index {n} outside 1..{m}")
        c = np.zeros(m)
        c[n - 1] = 1.0
        return cls(c, basis, domain_length)

    @property
    def size(self) -> int:
        return self.coeffs.size

    def like(self, coeffs) -> "SpectralField":
        return SpectralField(coeffs, self.basis, self.domain_length)

    def compatible(self, other: "SpectralField") -> bool:
        return (self.basis == other.basis and self.size == other.size
                and self.domain_length == other.domain_length)

    def _check(self, other):
        if not isinstance(other, SpectralField) or not self.compatible(other):
            raise ModelError("incompatible fields (basis, size or domain length differ)")

    def __add__(self, other):
        self._check(other)
        return self.like(self.coeffs + other.coeffs)

    def __sub__(self, other):
        self._check(other)
        return self.like(self.coeffs - other.coeffs)

    def __mul__(self, a):
        return self.like(float(a) * self.coeffs)

    __rmul__ = __mul__

    def __neg__(self):
        return self.like(-self.coeffs)

    def __repr__(self):
        return (f"SpectralField(size={self.size}, basis={self.basis!r}, "
                f"domain_length={self.domain_length:.6g})")


def norm_h_s(u: SpectralField, s: float = 0.0, eigenvalues=None) -> float:
    """Norm ``(sum lambda_n^s u_n^2)^(1/2)``; ``s = 0`` is the ``H`` norm."""
    c = u.coeffs
    if s == 0:
        return float(np.linalg.norm(c))
    if eigenvalues is None:
        raise ModelError("eigenvalues are required for s != 0")
    lam = np.asarray(eigenvalues, dtype=float)[: c.size]
    return float(np.sqrt(np.sum(lam ** s * c * c)))


def project_low(u: SpectralField, n: int) -> SpectralField:
    """P_N: keep the first ``n`` coefficients."""
    if not 0 <= n <= u.size:
        raise ModelError(f"projection index {n} outside 0..{u.size}")
    c = np.zeros(u.size)
    c[:n] = u.coeffs[:n]
    return u.like(c)


def project_high(u: SpectralField, n: int) -> SpectralField:
    """Q_N = 1 - P_N."""
    if not 0 <= n <= u.size:
        raise ModelError(f"projection index {n} outside 0..{u.size}")
    c = np.array(u.coeffs)
    c[:n] = 0.0
    return u.like(c)


# ---------------------------------------------------------------------------
# Bases and collocation grids


def wavenumbers(m: int, basis: str) -> np.ndarray:
    """Integer wavenumber attached to each coefficient slot."""
    j = np.arange(m)
    if basis == "dirichlet_sine":
        return j + 1
    if basis == "periodic_fourier":
        return (j + 1) // 2
    raise ModelError(f"basis {basis!r} has no wavenumbers")


def basis_functions(basis: str, domain_length: float, m: int, x) -> np.ndarray:
    """Matrix ``E[i, n] = e_n(x_i)``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    L = float(domain_length)
    if basis == "dirichlet_sine":
        n = np.arange(1, m + 1)
        return np.sin(np.pi * np.outer(x, n) / L)
    if basis == "periodic_fourier":
        out = np.empty((x.size, m))
        out[:, 0] = 1.0 / math.sqrt(2.0)
        for j in range(1, m):
            k = (j + 1) // 2
            arg = 2.0 * np.pi * k * x / L
            out[:, j] = np.cos(arg) if j % 2 else np.sin(arg)
        return out
    raise ModelError(f"basis {basis!r} has no spatial representation")


def grid_points(basis: str, domain_length: float, n_points: int) -> np.ndarray:
    L = float(domain_length)
    if basis == "dirichlet_sine":
        return L * np.arange(1, n_points + 1) / (n_points + 1)
    if basis == "periodic_fourier":
        return L * np.arange(n_points) / n_points
    raise ModelError(f"basis {basis!r} has no collocation grid")


def _grid_from_coeffs(c: np.ndarray, basis: str, n: int) -> np.ndarray:
    m = c.shape[-1]
    if n < m:
        raise AliasingError(f"{n} collocation points cannot resolve {m} modes")
    if basis == "dirichlet_sine":
        pad = np.zeros(c.shape[:-1] + (n,))
        pad[..., :m] = c
        return 0.5 * sfft.dst(pad, type=1, axis=-1)
    if basis == "periodic_fourier":
        spec = np.zeros(c.shape[:-1] + (n // 2 + 1,), dtype=complex)
        spec[..., 0] = n * c[..., 0] / math.sqrt(2.0)
        for j in range(1, m):
            k = (j + 1) // 2
            if j % 2:
                scale = n if 2 * k == n else n / 2
                spec[..., k] += scale * c[..., j]
            else:
                spec[..., k] -= 1j * (n / 2) * c[..., j]
        return sfft.irfft(spec, n, axis=-1)
    raise ModelError(f"basis {basis!r} has no collocation grid")


def _coeffs_from_grid(v: np.ndarray, basis: str, m: int) -> np.ndarray:
    n = v.shape[-1]
    if n < m:
        raise AliasingError(f"{n} collocation points cannot resolve {m} modes")
    if basis == "dirichlet_sine":
        return sfft.dst(v, type=1, axis=-1)[..., :m] / (n + 1)
    if basis == "periodic_fourier":
        spec = sfft.rfft(v, axis=-1)
        out = np.zeros(v.shape[:-1] + (m,))
        out[..., 0] = math.sqrt(2.0) * spec[..., 0].real / n
        for j in range(1, m):
            k = (j + 1) // 2
            if j % 2:
                scale = n if 2 * k == n else n / 2
                out[..., j] = spec[..., k].real / scale
            else:
                out[..., j] = -spec[..., k].imag / (n / 2)
        return out
    raise ModelError(f"basis {basis!r} has no collocation grid")


def to_grid(u: SpectralField, n_points: int) -> np.ndarray:
    """Values of the eigenfunction sum at the ``n_points`` collocation nodes."""
    return _grid_from_coeffs(u.coeffs, u.basis, int(n_points))


def from_grid(values, m: int, basis: str = "dirichlet_sine",
              domain_length: float = math.pi) -> SpectralField:
    """Discrete transform back to the first ``m`` coefficients."""
    v = np.asarray(values, dtype=float)
    return SpectralField(_coeffs_from_grid(v, basis, m), basis, domain_length)


# ---------------------------------------------------------------------------
# Nonlinearities


def smooth_step(t):
    """C^2 transition from 0 (t <= 0) to 1 (t >= 1)."""
    t = np.clip(t, 0.0, 1.0)
    return t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)


def _smooth_step_integral(t):
    """Integral of :func:`smooth_step` from 0 to t, for t in [0, 1]."""
    t = np.clip(t, 0.0, 1.0)
    return t ** 4 * (2.5 - 3.0 * t + t * t)


def flat_cutoff(x):
    """Odd, compactly supported profile with ``phi(x) = x`` on [-1, 1].

    The derivative is 1 on [0, 1], turns to -1 over [1, 2], stays -1 on
    [2, 2.5] and returns to 0 over [2.5, 3.5], so ``|phi'| <= 1`` and
    ``phi`` vanishes for ``|x| >= 3.5``.
    """
    x = np.asarray(x, dtype=float)
    a = np.abs(x)
    y = np.where(a <= 1.0, a, 0.0)
    seg = (a > 1.0) & (a <= 2.0)
    # phi(1 + t) = 1 + t - 2 S(t)
    t = a - 1.0
    y = np.where(seg, 1.0 + t - 2.0 * _smooth_step_integral(t), y)
    # phi(2) = 1; then slope -1 down to phi(2.5) = 0.5
    seg = (a > 2.0) & (a <= 2.5)
    y = np.where(seg, 1.0 - (a - 2.0), y)
    # phi(2.5 + t) = 0.5 - t + S(t)
    seg = (a > 2.5) & (a < 3.5)
    t = a - 2.5
    y = np.where(seg, 0.5 - t + _smooth_step_integral(t), y)
    return np.sign(x) * y


def flat_cutoff_derivative(x):
    a = np.abs(np.asarray(x, dtype=float))
    d = np.where(a <= 1.0, 1.0, 0.0)
    d = np.where((a > 1.0) & (a <= 2.0), 1.0 - 2.0 * smooth_step(a - 1.0), d)
    d = np.where((a > 2.0) & (a <= 2.5), -1.0, d)
    d = np.where((a > 2.5) & (a < 3.5), -1.0 + smooth_step(a - 2.5), d)
    return d


@dataclass(frozen=True)
class NonlinearitySpec:
    """Description of ``f``.

    ``pointwise``: ``f(u)(x) = h(clip(u(x), -R, R))`` with ``h`` chosen by
    ``name``: ``sine`` (a sin s), ``cubic`` (mu s - s^3) or ``linear`` (c s);
    ``params`` holds the single coefficient. ``modal_cutoff``:
    ``f(u) = sum_{n<=N} lambda_n phi(u_n) e_n`` with ``params = (N,)``.
    """

    kind: str = "zero"
    name: str = ""
    params: tuple = ()

    def __post_init__(self):
        if self.kind not in ("pointwise", "modal_cutoff", "zero"):
            raise ModelError(f"unknown nonlinearity kind {self.kind!r}")
        if self.kind == "pointwise" and self.name not in POINTWISE_FUNCTIONS:
            raise ModelError(f"unknown pointwise function {self.name!r}")
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        if self.kind == "modal_cutoff":
            if len(self.params) != 1 or self.params[0] < 0 or self.params[0] != int(self.params[0]):
                raise ModelError("modal_cutoff needs params=(N,) with integer N >= 0")

    @property
    def coefficient(self) -> float:
        return self.params[0] if self.params else 1.0

    def scalar(self, s):
        a = self.coefficient
        if self.name == "sine":
            return a * np.sin(s)
        if self.name == "cubic":
            return a * s - s ** 3
        return a * s

    def scalar_derivative(self, s):
        a = self.coefficient
        if self.name == "sine":
            return a * np.cos(s)
        if self.name == "cubic":
            return a - 3.0 * s ** 2
        return a + 0.0 * s

    def lipschitz_bound(self, cutoff_radius: float = math.inf, eigenvalues=None) -> float:
        """Global Lipschitz constant of ``f`` as a map H -> H."""
        if self.kind == "zero":
            return 0.0
        if self.kind == "modal_cutoff":
            n = int(self.params[0])
            return float(eigenvalues[n - 1]) if n > 0 else 0.0
        a = self.coefficient
        if self.name == "sine":
            return abs(a)
        if self.name == "linear":
            return abs(a)
        if not math.isfinite(cutoff_radius):
            return math.inf
        return max(abs(a), abs(a - 3.0 * cutoff_radius ** 2))


ZERO = NonlinearitySpec()


# ---------------------------------------------------------------------------
# Problem definition


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    eigenvalues: np.ndarray
    basis: str = "dirichlet_sine"
    domain_length: float = math.pi
    nu: float = 1.0
    alpha: float = 0.0
    lipschitz_L: float = 0.0
    nonlinearity: NonlinearitySpec = ZERO
    forcing: SpectralField | None = None
    cutoff_radius: float = math.inf
    n_quad: int | None = None

    def __post_init__(self):
        lam = np.array(self.eigenvalues, dtype=float).reshape(-1)
        if lam.size < 1:
            raise ModelError("at least one eigenvalue is required")
        if np.any(lam <= 0) or np.any(np.diff(lam) < 0):
            raise ModelError("eigenvalues must be positive and nondecreasing")
        if not 0.0 <= self.alpha < 1.0:
            raise ModelError("alpha must lie in [0, 1)")
        if self.lipschitz_L < 0:
            raise ModelError("lipschitz_L must be nonnegative")
        if not self.cutoff_radius > 0:
            raise ModelError("cutoff_radius must be positive")
        lam.setflags(write=False)
        object.__setattr__(self, "eigenvalues", lam)
        g = self.forcing
        if g is None:
            g = SpectralField.zeros(lam.size, self.basis, self.domain_length)
        if g.size != lam.size or g.basis != self.basis:
            raise ModelError("forcing does not match the eigenbasis")
        object.__setattr__(self, "forcing", g)
        if self.nonlinearity.kind == "modal_cutoff" and self.nonlinearity.params[0] > lam.size:
            raise ModelError("modal_cutoff mode count exceeds the number of modes")
        if self.n_quad is None:
            object.__setattr__(self, "n_quad", 2 * lam.size)
        elif self.n_quad < lam.size:
            raise AliasingError("n_quad must be at least the number of modes")

    @property
    def m_grid(self) -> int:
        return self.eigenvalues.size

    def replace(self, **changes) -> "ProblemSpec":
        return dataclasses.replace(self, **changes)

    def field(self, coeffs) -> SpectralField:
        return SpectralField(coeffs, self.basis, self.domain_length)

    def zeros(self) -> SpectralField:
        return SpectralField.zeros(self.m_grid, self.basis, self.domain_length)

    def check(self, u: SpectralField):
        if u.basis != self.basis or u.size != self.m_grid or u.domain_length != self.domain_length:
            raise ModelError("field is not compatible with the problem")


def make_operator(preset: str, m_grid: int, nu: float = 1.0,
                  domain_length: float = math.pi, eigenvalues=None,
                  eps_shift: float = 1e-2) -> ProblemSpec:
    """Eigenvalues of ``A`` for a preset, wrapped in a linear problem skeleton.

    ``dirichlet_heat``: lambda_n = nu (n pi / L)^2.
    ``periodic_heat``: lambda = nu (2 pi k / L)^2 per cos/sin slot, with the
    constant mode lifted to ``eps_shift`` so that ``A`` stays positive.
    ``explicit``: the given vector, sorted.
    """
    if preset == "explicit":
        if eigenvalues is None:
            raise ModelError("explicit preset needs eigenvalues")
        lam = np.sort(np.asarray(eigenvalues, dtype=float))
        return ProblemSpec(lam, basis="euclidean", domain_length=1.0, nu=nu)
    if int(m_grid) < 1:
        raise ModelError("m_grid must be at least 1")
    if not nu > 0:
        raise ModelError("nu must be positive")
    m = int(m_grid)
    if preset == "dirichlet_heat":
        n = np.arange(1, m + 1)
        lam = nu * (n * np.pi / domain_length) ** 2
        return ProblemSpec(lam, "dirichlet_sine", domain_length, nu=nu)
    if preset == "periodic_heat":
        k = wavenumbers(m, "periodic_fourier")
        lam = nu * (2.0 * np.pi * k / domain_length) ** 2
        lam[0] = eps_shift
        return ProblemSpec(np.sort(lam), "periodic_fourier", domain_length, nu=nu)
    raise ModelError(f"unknown operator preset {preset!r}")


def with_nonlinearity(spec: ProblemSpec, nonlinearity: NonlinearitySpec,
                      cutoff_radius: float = math.inf, forcing=None) -> ProblemSpec:
    """Attach ``f`` (and optionally ``g``) and set ``lipschitz_L`` from its bound."""
    L = nonlinearity.lipschitz_bound(cutoff_radius, spec.eigenvalues)
    if forcing is not None and not isinstance(forcing, SpectralField):
        forcing = spec.field(forcing)
    return spec.replace(nonlinearity=nonlinearity, cutoff_radius=cutoff_radius,
                        lipschitz_L=L, forcing=forcing if forcing is not None else spec.forcing)


def sine_problem(m_grid: int = 16, nu: float = 1.0, amplitude: float = 1.0,
                 forcing=None, domain_length: float = math.pi) -> ProblemSpec:
    """Dirichlet heat equation with ``f(u) = amplitude * sin(u)``."""
    base = make_operator("dirichlet_heat", m_grid, nu, domain_length)
    return with_nonlinearity(base, NonlinearitySpec("pointwise", "sine", (amplitude,)),
                             forcing=forcing)


def chafee_infante(m_grid: int = 32, nu: float = 1.0, mu: float = 2.0,
                   radius_factor: float = 1.2, forcing=None,
                   domain_length: float = math.pi, basis: str = "dirichlet_sine",
                   eps_shift: float = 1e-2) -> ProblemSpec:
    """``f(u) = mu s - s^3`` with ``s = clip(u, -R, R)`` and ``R = radius_factor sqrt(mu)``.

    Every equilibrium and the attractor satisfy ``|u| <= sqrt(mu)``, so the
    flattening only acts outside the absorbing set.
    """
    preset = "dirichlet_heat" if basis == "dirichlet_sine" else "periodic_heat"
    base = make_operator(preset, m_grid, nu, domain_length, eps_shift=eps_shift)
    R = radius_factor * math.sqrt(max(mu, 1e-12))
    return with_nonlinearity(base, NonlinearitySpec("pointwise", "cubic", (mu,)),
                             cutoff_radius=R, forcing=forcing)


def degenerate_cube(m_grid: int, n_modes: int, nu: float = 1.0,
                    domain_length: float = math.pi) -> ProblemSpec:
    """Modal cutoff ``f(u) = sum_{n<=N} lambda_n phi(u_n) e_n`` with ``g = 0``."""
    base = make_operator("dirichlet_heat", m_grid, nu, domain_length)
    return with_nonlinearity(base, NonlinearitySpec("modal_cutoff", "", (n_modes,)))


# ---------------------------------------------------------------------------
# Right-hand side


def nonlinear_term(spec: ProblemSpec, coeffs: np.ndarray) -> np.ndarray:
    """Coefficients of ``f(u)``; accepts a single vector or a stack of them."""
    nl = spec.nonlinearity
    if nl.kind == "zero":
        return np.zeros_like(coeffs)
    if nl.kind == "modal_cutoff":
        n = int(nl.params[0])
        out = np.zeros_like(coeffs)
        out[..., :n] = spec.eigenvalues[:n] * flat_cutoff(coeffs[..., :n])
        return out
    if spec.basis == "euclidean":
        s = np.clip(coeffs, -spec.cutoff_radius, spec.cutoff_radius)
        return nl.scalar(s)
    vals = _grid_from_coeffs(coeffs, spec.basis, spec.n_quad)
    s = np.clip(vals, -spec.cutoff_radius, spec.cutoff_radius)
    return _coeffs_from_grid(nl.scalar(s), spec.basis, spec.m_grid)


def eval_rhs(spec: ProblemSpec, u: SpectralField) -> SpectralField:
    """``-A u + f(u) + g``."""
    spec.check(u)
    c = u.coeffs
    r = -spec.eigenvalues * c + nonlinear_term(spec, c) + spec.forcing.coeffs
    return u.like(r)


def estimate_lipschitz(spec: ProblemSpec, n_samples: int = 1000, seed: int = 0,
                       scale: float | None = None) -> float:
    """Largest observed ``||f(u) - f(v)|| / ||u - v||_{H^alpha}`` over random pairs."""
    rng = np.random.default_rng(seed)
    m = spec.m_grid
    if scale is None:
        scale = 2.0 * spec.cutoff_radius if math.isfinite(spec.cutoff_radius) else 3.0
    decay = 1.0 / np.arange(1, m + 1)
    amp = scale * rng.uniform(0.05, 1.0, size=(n_samples, 1))
    u = amp * rng.standard_normal((n_samples, m)) * decay
    near = rng.random(n_samples) < 0.5
    dv = rng.standard_normal((n_samples, m)) * decay * 10.0 ** rng.uniform(-4, 0, (n_samples, 1))
    v = np.where(near[:, None], u + dv, amp * rng.standard_normal((n_samples, m)) * decay)
    fu = nonlinear_term(spec, u)
    fv = nonlinear_term(spec, v)
    w = spec.eigenvalues ** spec.alpha
    num = np.linalg.norm(fu - fv, axis=1)
    den = np.sqrt(np.sum(w * (u - v) ** 2, axis=1))
    ok = den > 0
    return float(np.max(num[ok] / den[ok])) if np.any(ok) else 0.0


# ---------------------------------------------------------------------------
# Time stepping


def phi1(z):
    """``(1 - exp(-z)) / z`` with the removable singularity at 0."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < 1e-8
    safe = np.where(small, 1.0, z)
    return np.where(small, 1.0 - z / 2.0, -np.expm1(-safe) / safe)


SCHEMES = ("exp_euler", "imex_cn")


class Stepper:
    """One-step map with cached linear factors.

    ``shift`` adds a diagonal term to ``A`` (used for nudging); the extra
    forcing passed to :meth:`advance` enters the explicit part.
    """

    def __init__(self, spec: ProblemSpec, dt: float, scheme: str = "exp_euler",
                 shift=None):
        if not dt > 0:
            raise ModelError("dt must be positive")
        if scheme not in SCHEMES:
            raise ModelError(f"unknown scheme {scheme!r}")
        self.spec = spec
        self.dt = float(dt)
        self.scheme = scheme
        lam = spec.eigenvalues.copy()
        if shift is not None:
            lam = lam + np.asarray(shift, dtype=float)
        z = lam * self.dt
        if scheme == "exp_euler":
            self.decay = np.exp(-z)
            self.gain = self.dt * phi1(z)
        else:
            self.decay = (1.0 - z / 2.0) / (1.0 + z / 2.0)
            self.gain = self.dt / (1.0 + z / 2.0)
        self.g = spec.forcing.coeffs

    def advance(self, c: np.ndarray, extra=None) -> np.ndarray:
        n = nonlinear_term(self.spec, c) + self.g
        if extra is not None:
            n = n + extra
        return self.decay * c + self.gain * n


def step(spec: ProblemSpec, u: SpectralField, dt: float, scheme: str = "exp_euler",
         t: float = 0.0) -> SpectralField:
    """Advance ``u`` by one step of length ``dt``.

    ``exp_euler`` treats each linear mode exactly and ``f + g`` explicitly;
    ``imex_cn`` uses Crank-Nicolson for ``A`` and forward Euler for ``f + g``.
    Both are first order.
    """
    spec.check(u)
    out = Stepper(spec, dt, scheme).advance(u.coeffs)
    if not np.all(np.isfinite(out)):
        raise NumericalBlowupError(t + dt)
    return u.like(out)


def default_dt(spec: ProblemSpec, scheme: str = "exp_euler") -> float:
    if scheme == "imex_cn":
        return 0.1 / float(spec.eigenvalues[-1])
    return 1e-2


def n_steps_for(t_end: float, dt: float) -> int:
    return int(math.floor(t_end / dt + 1e-9))


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Uniformly sampled states; row ``i`` is the state at ``t0 + i * dt``."""

    states: np.ndarray
    dt: float
    t0: float = 0.0
    basis: str = "dirichlet_sine"
    domain_length: float = math.pi

    def __post_init__(self):
        s = np.array(self.states, dtype=float)
        if s.ndim != 2 or s.shape[0] < 1:
            raise ModelError("states must be a non-empty 2D array")
        if not self.dt > 0:
            raise ModelError("dt must be positive")
        s.setflags(write=False)
        object.__setattr__(self, "states", s)

    @classmethod
    def from_samples(cls, samples: Sequence[SpectralField], dt: float, t0: float = 0.0):
        first = samples[0]
        for s in samples[1:]:
            first._check(s)
        return cls(np.stack([s.coeffs for s in samples]), dt, t0, first.basis,
                   first.domain_length)

    def __len__(self):
        return self.states.shape[0]

    def __getitem__(self, i) -> SpectralField:
        return SpectralField(self.states[i], self.basis, self.domain_length)

    @property
    def samples(self) -> list[SpectralField]:
        return [self[i] for i in range(len(self))]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(len(self))

    @property
    def final(self) -> SpectralField:
        return self[len(self) - 1]

    def slice(self, start: int, stop: int | None = None) -> "Trajectory":
        return Trajectory(self.states[start:stop], self.dt, self.t0 + start * self.dt,
                          self.basis, self.domain_length)


def integrate(spec: ProblemSpec, u0: SpectralField, t_end: float, dt: float | None = None,
              scheme: str = "exp_euler", t0: float = 0.0,
              forcing_fn: Callable[[int, np.ndarray], np.ndarray] | None = None,
              shift=None) -> Trajectory:
    """Integrate from ``t0`` over ``[t0, t0 + t_end]``; returns ``floor(t_end/dt) + 1`` samples.

    ``forcing_fn(i, c)``, when given, returns an extra explicit term for the
    step leaving sample ``i``.
    """
    spec.check(u0)
    if not t_end > 0:
        raise ModelError("t_end must be positive")
    dt = default_dt(spec, scheme) if dt is None else dt
    stepper = Stepper(spec, dt, scheme, shift=shift)
    n = n_steps_for(t_end, dt)
    out = np.empty((n + 1, spec.m_grid))
    c = u0.coeffs.copy()
    out[0] = c
    for i in range(n):
        extra = forcing_fn(i, c) if forcing_fn is not None else None
        c = stepper.advance(c, extra)
        if not np.all(np.isfinite(c)):
            raise NumericalBlowupError(t0 + (i + 1) * dt)
        out[i + 1] = c
    return Trajectory(out, dt, t0, spec.basis, spec.domain_length)


def random_field(spec: ProblemSpec, rng: np.random.Generator, amplitude: float = 1.0,
                 decay: float = 1.0) -> SpectralField:
    """Random state with coefficients ~ N(0, 1) / n^decay scaled to ``amplitude`` in H."""
    c = rng.standard_normal(spec.m_grid) / np.arange(1, spec.m_grid + 1) ** decay
    c *= amplitude / np.linalg.norm(c)
    return spec.field(c)


def find_equilibrium(spec: ProblemSpec, guess: SpectralField, relax_time: float = 50.0,
                     dt: float = 1e-2, tol: float = 1e-12) -> SpectralField:
    """Relax by time stepping, then polish with a Newton solve of ``rhs = 0``."""
    from scipy.optimize import root

    u = integrate(spec, guess, relax_time, dt).final
    sol = root(lambda c: eval_rhs(spec, spec.field(c)).coeffs, u.coeffs, tol=tol,
               method="hybr")
    c = sol.x if sol.success else u.coeffs
    return spec.field(c)
