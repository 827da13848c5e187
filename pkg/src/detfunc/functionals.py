"""Observables ``F: H -> R`` and the classical sufficiency thresholds."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from math import comb

import numpy as np

from .spectral import ModelError, SpectralField, basis_functions

KINDS = ("fourier_mode", "node", "linear", "polynomial")


def monomial_exponents(degree: int, n_vars: int) -> np.ndarray:
    """Exponent table of all monomials of total degree <= ``degree``.

    Ordered by degree, then lexicographically: for two variables and degree 2
    the rows are 1, u1, u2, u1^2, u1 u2, u2^2.
    """
    rows = []
    for d in range(degree + 1):
        for combo in combinations_with_replacement(range(n_vars), d):
            e = [0] * n_vars
            for i in combo:
                e[i] += 1
            rows.append(e)
    return np.array(rows, dtype=int).reshape(-1, n_vars)


def monomial_count(degree: int, n_vars: int) -> int:
    return comb(degree + n_vars, n_vars)


@dataclass(frozen=True, eq=False)
class FunctionalSpec:
    """One observable.

    kind ``fourier_mode``: ``params = {"n": int}``, returns ``u_n`` (1-based).
    kind ``node``: ``params = {"x0": float}``, point value of the eigen-sum.
    kind ``linear``: ``params = {"l": coefficient vector}``, returns ``(l, u)``.
    kind ``polynomial``: ``params = {"degree", "support", "coefficients", "seed"}``,
    a polynomial in ``u_1..u_support`` over :func:`monomial_exponents`.
    """

    kind: str
    params: dict = field(default_factory=dict)
    label: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ModelError(f"unknown functional kind {self.kind!r}")
        p = dict(self.params)
        if self.kind == "fourier_mode":
            p["n"] = int(p["n"])
            if p["n"] < 1:
                raise ModelError("fourier_mode index must be >= 1")
        elif self.kind == "node":
            p["x0"] = float(p["x0"])
        elif self.kind == "linear":
            p["l"] = np.asarray(p["l"], dtype=float).reshape(-1)
        else:
            p["degree"] = int(p["degree"])
            p["support"] = int(p["support"])
            c = np.asarray(p["coefficients"], dtype=float).reshape(-1)
            if p["degree"] < 0 or p["support"] < 1:
                raise ModelError("polynomial needs degree >= 0 and support >= 1")
            if c.size != monomial_count(p["degree"], p["support"]):
                raise ModelError(
                    f"polynomial of degree {p['degree']} in {p['support']} variables "
                    f"needs {monomial_count(p['degree'], p['support'])} coefficients, got {c.size}")
            p["coefficients"] = c
            p.setdefault("seed", None)
        object.__setattr__(self, "params", p)

    @classmethod
    def fourier_mode(cls, n: int, label: str = ""):
        return cls("fourier_mode", {"n": n}, label)

    @classmethod
    def node(cls, x0: float, label: str = ""):
        return cls("node", {"x0": x0}, label)

    @classmethod
    def linear(cls, l, label: str = ""):
        if isinstance(l, SpectralField):
            l = l.coeffs
        return cls("linear", {"l": l}, label)

    @classmethod
    def polynomial(cls, degree: int, support: int, coefficients, seed=None, label: str = ""):
        return cls("polynomial", {"degree": degree, "support": support,
                                  "coefficients": coefficients, "seed": seed}, label)

    @property
    def is_linear(self) -> bool:
        return self.kind in ("fourier_mode", "node", "linear")

    def weights(self, m: int, basis: str, domain_length: float) -> np.ndarray:
        """Coefficient vector ``l`` with ``F(u) = l . u`` (linear kinds only)."""
        if self.kind == "fourier_mode":
            n = self.params["n"]
            if n > m:
                raise ModelError(f"mode index {n} exceeds field size {m}")
            w = np.zeros(m)
            w[n - 1] = 1.0
            return w
        if self.kind == "node":
            x0 = self.params["x0"]
            _check_node(x0, basis, domain_length)
            return basis_functions(basis, domain_length, m, [x0])[0]
        if self.kind == "linear":
            l = self.params["l"]
            if l.size > m:
                raise ModelError("linear functional longer than the field")
            w = np.zeros(m)
            w[: l.size] = l
            return w
        raise ModelError("polynomial functionals have no weight vector")

    def evaluate_many(self, coeffs: np.ndarray, basis: str = "dirichlet_sine",
                      domain_length: float = math.pi) -> np.ndarray:
        """Evaluate on a stack of coefficient vectors (rows)."""
        c = np.atleast_2d(np.asarray(coeffs, dtype=float))
        m = c.shape[1]
        if self.is_linear:
            return c @ self.weights(m, basis, domain_length)
        d, s = self.params["degree"], self.params["support"]
        if s > m:
            raise ModelError(f"polynomial support {s} exceeds field size {m}")
        exps = monomial_exponents(d, s)
        x = c[:, :s]
        mono = np.prod(x[:, None, :] ** exps[None, :, :], axis=2)
        return mono @ self.params["coefficients"]

    def to_dict(self) -> dict:
        p = {}
        for k, v in self.params.items():
            p[k] = v.tolist() if isinstance(v, np.ndarray) else v
        out = {"kind": self.kind, **p}
        if self.label:
            out["label"] = self.label
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "FunctionalSpec":
        d = dict(d)
        kind = d.pop("kind")
        label = d.pop("label", "")
        allowed = {"fourier_mode": {"n"}, "node": {"x0"}, "linear": {"l"},
                   "polynomial": {"degree", "support", "coefficients", "seed"}}
        if kind not in allowed:
            raise ModelError(f"unknown functional kind {kind!r}")
        if kind == "polynomial" and "coefficients" not in d:
            extra = set(d) - {"degree", "support", "seed"}
            if extra:
                raise ModelError(f"unknown functional key {sorted(extra)[0]!r}")
            return sample_polynomial(d["degree"], d["support"], d.get("seed", 0))
        extra = set(d) - allowed[kind]
        if extra:
            raise ModelError(f"unknown functional key {sorted(extra)[0]!r}")
        return cls(kind, d, label)


def _check_node(x0: float, basis: str, domain_length: float):
    if basis == "dirichlet_sine":
        if not 0.0 < x0 < domain_length:
            raise ModelError(f"node x0={x0} outside (0, {domain_length})")
    elif basis == "periodic_fourier":
        if not 0.0 <= x0 < domain_length:
            raise ModelError(f"node x0={x0} outside [0, {domain_length})")
    else:
        raise ModelError(f"node functionals need a spatial basis, got {basis!r}")


def evaluate(F: FunctionalSpec, u: SpectralField) -> float:
    return float(F.evaluate_many(u.coeffs[None, :], u.basis, u.domain_length)[0])


def evaluate_all(functionals, states: np.ndarray, basis: str = "dirichlet_sine",
                 domain_length: float = math.pi) -> np.ndarray:
    """Matrix ``out[t, i] = F_i(state_t)``."""
    states = np.atleast_2d(states)
    if not functionals:
        return np.zeros((states.shape[0], 0))
    return np.column_stack([F.evaluate_many(states, basis, domain_length) for F in functionals])


def mode_threshold(L: float, alpha: float, eigenvalues) -> int | None:
    """Smallest ``N >= 0`` with ``L < lambda_{N+1}^(1 - alpha)``.

    Returns ``None`` when no such ``N`` exists within the given eigenvalues.
    """
    lam = np.asarray(eigenvalues, dtype=float).reshape(-1)
    if lam.size == 0:
        raise ModelError("empty eigenvalue list")
    if not L > 0:
        raise ModelError("L must be positive")
    if not 0.0 <= alpha < 1.0:
        raise ModelError("alpha must lie in [0, 1)")
    ok = np.nonzero(L < lam ** (1.0 - alpha))[0]
    return int(ok[0]) if ok.size else None


def node_bound(nu: float, L: float) -> float:
    """Largest node position ``x0`` with ``nu (pi / x0)^2 > L`` (exclusive)."""
    if not (nu > 0 and L > 0):
        raise ModelError("nu and L must be positive")
    return math.pi * math.sqrt(nu / L)


def sample_polynomial(degree: int, mode_support: int, seed: int) -> FunctionalSpec:
    """Polynomial with coefficients drawn uniformly from [-1, 1]."""
    if degree < 1 or mode_support < 1:
        raise ModelError("degree and mode_support must be >= 1")
    rng = np.random.default_rng(seed)
    c = rng.uniform(-1.0, 1.0, monomial_count(degree, mode_support))
    return FunctionalSpec.polynomial(degree, mode_support, c, seed=seed,
                                     label=f"poly(d={degree},m={mode_support},seed={seed})")


def quadratic_oscillator_functional() -> FunctionalSpec:
    """``x^2 + y^2 + 2 (z^2 + u^2) + x z + y u`` on the 4D oscillator system.

    Along an orbit ``(A sin, A cos, B sin, B cos)`` it equals the constant
    ``A^2 + 2 B^2 + A B cos(phi_1 - phi_2)``, so it separates orbits with
    different invariants but not time-shifted copies of one orbit.
    """
    exps = monomial_exponents(2, 4)
    coeffs = np.zeros(len(exps))
    wanted = {(2, 0, 0, 0): 1.0, (0, 2, 0, 0): 1.0, (0, 0, 2, 0): 2.0, (0, 0, 0, 2): 2.0,
              (1, 0, 1, 0): 1.0, (0, 1, 0, 1): 1.0}
    for i, e in enumerate(map(tuple, exps)):
        coeffs[i] = wanted.get(e, 0.0)
    return FunctionalSpec.polynomial(2, 4, coeffs, label="quadratic_oscillator")
