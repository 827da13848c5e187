"""Delay coordinates of a scalar observable and regression maps back to the state."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import pdist

from .functionals import FunctionalSpec
from .spectral import ModelError, Trajectory

THETA_SCHEMA = "detfunc.theta/1"
THETA_KINDS = ("nearest_neighbor", "local_linear")


def required_k(dim_b: float) -> int:
    """Window length ``ceil((2 + d) d) + 1`` for box-counting dimension ``d``."""
    if dim_b < 0:
        raise ModelError("dimension must be nonnegative")
    return int(math.ceil((2.0 + dim_b) * dim_b - 1e-12)) + 1


def dimension_bounds(dim_emb_r: int, dim_b_a: float) -> tuple[int, int, float]:
    """``(dim_emb(R), dim_emb(R) + 1, 2 dim_B(A) + 1)``.

    The determining dimension is at least the embedding dimension of the
    equilibrium set, generically at most one more, and in general at most
    ``2 dim_B + 1``.
    """
    if dim_emb_r < 0 or dim_b_a < 0:
        raise ModelError("dimensions must be nonnegative")
    return int(dim_emb_r), int(dim_emb_r) + 1, 2.0 * dim_b_a + 1.0


def default_tau(T0: float, k: int, dt: float) -> float:
    """``max(T0 / k, 10 dt)`` rounded up to the sample grid."""
    tau = max(T0 / k, 10.0 * dt)
    return math.ceil(tau / dt - 1e-9) * dt


@dataclass(frozen=True)
class DelayConfig:
    F: FunctionalSpec
    tau: float
    k: int
    T0: float = 0.0

    def __post_init__(self):
        if self.k < 1:
            raise ModelError("k must be >= 1")
        if not self.tau > 0:
            raise ModelError("tau must be positive")
        if self.k * self.tau < self.T0 * (1 - 1e-12):
            raise ModelError(f"k*tau={self.k * self.tau:g} is below T0={self.T0:g}")

    def lag(self, dt: float) -> int:
        """``tau / dt`` as an integer; refuses off-grid delays."""
        r = self.tau / dt
        n = int(round(r))
        if n < 1 or abs(r - n) > 1e-9 * max(1.0, r):
            raise ModelError(f"tau={self.tau:g} is not a multiple of dt={dt:g}")
        return n

    def to_dict(self) -> dict:
        return {"F": self.F.to_dict(), "tau": self.tau, "k": self.k, "T0": self.T0}


@dataclass(frozen=True)
class DelayVector:
    coords: np.ndarray
    base_time: float


def observe(traj: Trajectory, F: FunctionalSpec) -> np.ndarray:
    return F.evaluate_many(traj.states, traj.basis, traj.domain_length)


def delay_matrix(z, k: int, lag: int, extra: int = 0) -> np.ndarray:
    """Rows ``(z[j], z[j + lag], ..., z[j + (k-1) lag])``.

    ``extra`` further samples of length ``lag`` are reserved at the end (for
    targets ``extra * lag`` after the last coordinate).
    """
    z = np.asarray(z, dtype=float).reshape(-1)
    n = z.size - (k - 1 + extra) * lag
    if n < 1:
        raise ModelError(f"series of {z.size} samples is too short for k={k}, lag={lag}")
    return z[np.arange(n)[:, None] + lag * np.arange(k)[None, :]]


def build_delay_vectors(traj: Trajectory, cfg: DelayConfig) -> list[DelayVector]:
    lag = cfg.lag(traj.dt)
    X = delay_matrix(observe(traj, cfg.F), cfg.k, lag)
    t = traj.times
    return [DelayVector(X[j], float(t[j])) for j in range(X.shape[0])]


@dataclass
class TrainingSet:
    """Delay windows ``X`` with targets ``Y`` taken ``k tau`` after the window start."""

    X: np.ndarray
    Y: np.ndarray
    base_times: np.ndarray
    states: np.ndarray

    def __len__(self):
        return self.X.shape[0]

    def concat(self, other: "TrainingSet") -> "TrainingSet":
        return TrainingSet(np.vstack([self.X, other.X]), np.vstack([self.Y, other.Y]),
                           np.concatenate([self.base_times, other.base_times]),
                           np.vstack([self.states, other.states]))


def training_pairs(traj: Trajectory, cfg: DelayConfig, target: str = "state",
                   N: int | None = None, stride: int = 1) -> TrainingSet:
    """Windows and targets along one trajectory.

    ``target``: ``state`` (full ``u(t + k tau)``), ``low`` (its first ``N``
    modes) or ``Z`` (the observable ``F(u(t + k tau))``). ``states`` holds
    ``u`` at the window start, for injectivity checks.
    """
    lag = cfg.lag(traj.dt)
    z = observe(traj, cfg.F)
    X = delay_matrix(z, cfg.k, lag, extra=1)[::stride]
    idx = np.arange(X.shape[0] * stride)[::stride][: X.shape[0]]
    ti = idx + cfg.k * lag
    if target == "state":
        Y = traj.states[ti]
    elif target == "low":
        if N is None or N < 1:
            raise ModelError("target 'low' needs N >= 1")
        Y = traj.states[ti, :N]
    elif target == "Z":
        Y = z[ti][:, None]
    else:
        raise ModelError(f"unknown target {target!r}")
    return TrainingSet(X, np.array(Y), traj.times[idx], np.array(traj.states[idx]))


@dataclass
class InjectivityReport:
    worst_ratio: float
    worst_pair: tuple
    violations: list
    n_windows: int

    @property
    def has_violation(self) -> bool:
        return bool(self.violations)

    def summary(self) -> dict:
        return {"worst_ratio": self.worst_ratio, "worst_pair": list(self.worst_pair),
                "n_violations": len(self.violations), "violations": self.violations[:20],
                "n_windows": self.n_windows}


def injectivity_diagnostic(vectors, states, eps_guard: float = 1e-12,
                           delay_tol: float = 1e-8, state_tol: float = 1e-3
                           ) -> InjectivityReport:
    """Worst ``||state_i - state_j|| / (||vec_i - vec_j|| + eps_guard)`` over all pairs.

    A pair is a violation when the delay distance is below ``delay_tol`` while
    the state distance exceeds ``state_tol``.
    """
    X = np.array([v.coords if isinstance(v, DelayVector) else v for v in vectors], dtype=float)
    S = np.array([getattr(s, "coeffs", s) for s in states], dtype=float)
    if X.shape[0] != S.shape[0]:
        raise ModelError("vectors and states are not aligned")
    if X.shape[0] < 2:
        raise ModelError("need at least two windows")
    X = X.reshape(X.shape[0], -1)
    S = S.reshape(S.shape[0], -1)
    dv = pdist(X)
    ds = pdist(S)
    ratio = ds / (dv + eps_guard)
    w = int(np.argmax(ratio))
    n = X.shape[0]
    bad = np.nonzero((dv < delay_tol) & (ds > state_tol))[0]
    viol = [{"pair": list(_pair_index(int(b), n)), "delay_distance": float(dv[b]),
             "state_distance": float(ds[b])} for b in bad[:100]]
    return InjectivityReport(float(ratio[w]), _pair_index(w, n), viol, n)


def _pair_index(b: int, n: int) -> tuple[int, int]:
    """Invert the condensed index of :func:`scipy.spatial.distance.pdist`."""
    i = int(n - 2 - math.floor(math.sqrt(-8 * b + 4 * n * (n - 1) - 7) / 2.0 - 0.5))
    j = int(b + i + 1 - n * (n - 1) // 2 + (n - i) * ((n - i) - 1) // 2)
    return i, j


@dataclass
class ThetaModel:
    """Nonparametric map from delay windows to targets.

    ``nearest_neighbor`` returns the target of the closest training window;
    ``local_linear`` fits an affine map on the ``n_neighbors`` closest ones.
    ``loo_errors`` are leave-one-out prediction errors on the training set.
    """

    kind: str
    X: np.ndarray
    Y: np.ndarray
    n_neighbors: int = 1
    loo_errors: np.ndarray = field(default_factory=lambda: np.zeros(0))
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in THETA_KINDS:
            raise ModelError(f"unknown model kind {self.kind!r}")
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.Y = np.asarray(self.Y, dtype=float).reshape(self.X.shape[0], -1)
        self._tree = cKDTree(self.X)

    @property
    def train_error(self) -> float:
        e = self.loo_errors
        return float(np.max(e)) if e.size and np.all(np.isfinite(e)) else float("nan")

    @property
    def output_dim(self) -> int:
        return self.Y.shape[1]

    def _neighbors(self, Q: np.ndarray, count: int, skip_self: bool):
        count = min(count + int(skip_self), self.X.shape[0])
        d, idx = self._tree.query(Q, k=count)
        idx = np.asarray(idx).reshape(Q.shape[0], count)
        if skip_self:
            keep = np.empty((Q.shape[0], count - 1), dtype=int)
            for r in range(Q.shape[0]):
                row = idx[r][idx[r] != self._self[r]]
                keep[r] = row[: count - 1]
            idx = keep
        return idx

    def _predict(self, Q: np.ndarray, skip_self: bool = False) -> np.ndarray:
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        if Q.shape[1] != self.X.shape[1]:
            raise ModelError(f"windows have length {Q.shape[1]}, model expects {self.X.shape[1]}")
        if self.kind == "nearest_neighbor":
            idx = self._neighbors(Q, 1, skip_self)[:, 0]
            return self.Y[idx].copy()
        idx = self._neighbors(Q, self.n_neighbors, skip_self)
        out = np.empty((Q.shape[0], self.Y.shape[1]))
        for r in range(Q.shape[0]):
            out[r] = _affine_fit(self.X[idx[r]], self.Y[idx[r]], Q[r])
        return out

    def predict(self, Q) -> np.ndarray:
        return self._predict(Q)

    def compute_loo(self) -> np.ndarray:
        n = self.X.shape[0]
        if n < 2:
            self.loo_errors = np.full(n, np.nan)
            return self.loo_errors
        self._self = np.arange(n)
        P = self._predict(self.X, skip_self=True)
        del self._self
        self.loo_errors = np.linalg.norm(P - self.Y, axis=1)
        return self.loo_errors

    def project(self, N: int) -> "ThetaModel":
        """Same model with targets truncated to the first ``N`` components."""
        m = ThetaModel(self.kind, self.X, self.Y[:, :N], self.n_neighbors, meta=dict(self.meta))
        m.compute_loo()
        return m

    def to_dict(self) -> dict:
        return {"schema": THETA_SCHEMA, "kind": self.kind, "n_neighbors": self.n_neighbors,
                "k": int(self.X.shape[1]), "n_pairs": int(self.X.shape[0]),
                "output_dim": int(self.Y.shape[1]), "X": self.X.reshape(-1).tolist(),
                "Y": self.Y.reshape(-1).tolist(), "loo_errors": self.loo_errors.tolist(),
                "meta": self.meta}

    @classmethod
    def from_dict(cls, d: dict) -> "ThetaModel":
        if d.get("schema") != THETA_SCHEMA:
            raise ModelError(f"unsupported model schema {d.get('schema')!r}")
        n, k, m = d["n_pairs"], d["k"], d["output_dim"]
        X = np.asarray(d["X"], dtype=float).reshape(n, k)
        Y = np.asarray(d["Y"], dtype=float).reshape(n, m)
        loo = np.array([float(v) for v in d.get("loo_errors", [])])
        return cls(d["kind"], X, Y, int(d["n_neighbors"]), loo, dict(d.get("meta", {})))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ThetaModel":
        return cls.from_dict(json.loads(text))


def _affine_fit(Xn: np.ndarray, Yn: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Least-squares affine fit through neighbours, evaluated at ``q``."""
    c = Xn.mean(axis=0)
    A = Xn - c
    scale = np.linalg.norm(A)
    if scale == 0:
        return Yn.mean(axis=0)
    coef, *_ = np.linalg.lstsq(np.column_stack([np.ones(len(Xn)), A]), Yn, rcond=1e-10)
    return coef[0] + (q - c) @ coef[1:]


def fit_theta(X, Y, kind: str = "nearest_neighbor", n_neighbors: int | None = None,
              meta: dict | None = None) -> ThetaModel:
    """Fit a reconstruction map and its leave-one-out errors.

    ``X`` are delay windows (rows) and ``Y`` the matching targets.
    """
    X = np.asarray(X, dtype=float)
    if X.size == 0:
        raise ModelError("empty training set")
    X = X.reshape(X.shape[0], -1)
    Y = np.asarray(Y, dtype=float).reshape(X.shape[0], -1)
    if n_neighbors is None:
        n_neighbors = 1 if kind == "nearest_neighbor" else 2 * (X.shape[1] + 1)
    model = ThetaModel(kind, X, Y, int(n_neighbors), meta=dict(meta or {}))
    model.compute_loo()
    return model


class OracleTheta:
    """Stand-in for a fitted map that returns the true low modes, in order."""

    def __init__(self, targets):
        self.targets = np.asarray(targets, dtype=float)

    def predict(self, X) -> np.ndarray:
        n = np.atleast_2d(X).shape[0]
        if n > self.targets.shape[0]:
            raise ModelError("oracle asked for more predictions than it holds")
        return self.targets[:n]


def predict_dde(model: ThetaModel, history, steps: int, form: str = "map",
                substeps: int = 1, tau: float = 1.0) -> np.ndarray:
    """Free-run the scalar delayed system from ``history``.

    ``form="map"``: ``Z_{j+k} = model(Z_j, ..., Z_{j+k-1})`` on the ``tau`` grid;
    ``history`` has length ``k``.

    ``form="ode"``: ``dZ/dt(t) = model(Z(t - k tau), ..., Z(t - tau))`` with
    explicit Euler at ``h = tau / substeps``; ``history`` holds ``k substeps + 1``
    samples on the ``h`` grid ending at the current time.
    """
    k = model.X.shape[1]
    z = list(np.asarray(history, dtype=float).reshape(-1))
    if form == "map":
        if len(z) != k:
            raise ModelError(f"history has length {len(z)}, expected k={k}")
        for _ in range(steps):
            z.append(float(model.predict(np.array(z[-k:])[None, :])[0, 0]))
        return np.array(z[k:])
    if form == "ode":
        m = int(substeps)
        need = k * m + 1
        if len(z) != need:
            raise ModelError(f"history has length {len(z)}, expected {need}")
        h = tau / m
        for _ in range(steps):
            window = np.array([z[-1 - (k - i) * m] for i in range(k)])
            z.append(z[-1] + h * float(model.predict(window[None, :])[0, 0]))
        return np.array(z[need:])
    raise ModelError(f"unknown form {form!r}")
