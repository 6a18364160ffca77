"""Mean and covariance flow of the weight distribution.

The mean follows ``d<w>/dt = (1 + 1/2 sum_kl Cov_kl d_k d_l) <f>(<w>)`` and the
covariance ``dCov/dt = Cov J' + J Cov`` with ``J_jk = d_k <f_j>`` evaluated at
the mean. Derivatives of the drift are taken by central finite differences.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special

from .drift import RuleConfig, drift_fn, isotropic_rates
from .specfun import SQRT_PI_OVER_8, erf_sigmoid_prime
from .task import IsotropicTaskParams, TaskSpec, model_accuracy

DIVERGENCE_NORM = 1e6


@dataclass(frozen=True)
class FlowConfig:
    dt: float = 0.01
    t_max: float = 10.0
    hessian_correction: bool = False
    jacobian_step: float = 1e-5
    hessian_step: float = 1e-3
    record_every: int = 10

    def __post_init__(self):
        if not (self.dt > 0 and self.t_max > 0 and self.dt <= self.t_max):
            raise ValueError("need 0 < dt <= t_max")
        if not 1e-8 <= self.jacobian_step <= 1e-2:
            raise ValueError("jacobian_step must lie in [1e-8, 1e-2]")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_max / self.dt))


@dataclass
class WeightState:
    mean: np.ndarray
    cov: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float).copy()
        n = self.mean.size
        cov = np.asarray(self.cov, dtype=float)
        if cov.shape != (n, n):
            raise ValueError(f"cov must have shape ({n}, {n})")
        cov = 0.5 * (cov + cov.T)
        if n and np.any(cov):
            evals, evecs = np.linalg.eigh(cov)
            if evals[0] < -1e-9 * max(1.0, evals[-1]):
                raise ValueError("cov is not positive semidefinite")
            if evals[0] < 0:
                cov = (evecs * np.clip(evals, 0, None)) @ evecs.T
        self.cov = cov

    @classmethod
    def delta(cls, w0) -> "WeightState":
        w0 = np.asarray(w0, dtype=float)
        return cls(w0, np.zeros((w0.size, w0.size)))


@dataclass
class Trajectory:
    """Recorded flow solution. ``reference`` is the direction used for alignment."""

    t: np.ndarray
    mean: np.ndarray
    reference: np.ndarray
    tr_cov: np.ndarray | None = None
    cov: np.ndarray | None = None
    hessian_norm: np.ndarray | None = None
    status: str = "ok"
    task: TaskSpec | None = field(default=None, repr=False)

    @property
    def norm(self) -> np.ndarray:
        return np.linalg.norm(self.mean, axis=1)

    @property
    def mu_dot_w(self) -> np.ndarray:
        return self.mean @ self.reference

    @property
    def alignment(self) -> np.ndarray:
        norm = self.norm
        ref = np.linalg.norm(self.reference)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(norm > 0, self.mu_dot_w / (ref * norm), np.nan)

    @property
    def accuracy(self) -> np.ndarray:
        if self.task is None:
            return np.full(self.t.size, np.nan)
        return np.array([model_accuracy(self.task, w) for w in self.mean])

    def columns(self, include_mean: bool = False) -> dict:
        cols = {"t": self.t}
        if include_mean:
            for i in range(self.mean.shape[1]):
                cols[f"w{i}"] = self.mean[:, i]
        cols["alignment"] = self.alignment
        cols["norm"] = self.norm
        cols["mu_dot_w"] = self.mu_dot_w
        cols["tr_cov"] = self.tr_cov if self.tr_cov is not None else np.zeros(self.t.size)
        cols["accuracy"] = self.accuracy
        return cols

    def to_csv(self, path, include_mean: bool = False) -> None:
        write_columns(path, self.columns(include_mean))


def write_columns(path, cols: dict) -> None:
    names = list(cols)
    rows = zip(*(np.asarray(cols[k]) for k in names))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        for row in rows:
            writer.writerow([repr(float(v)) for v in row])


def rk4_step(f, y, dt):
    k1 = f(y)
    k2 = f(y + 0.5 * dt * k1)
    k3 = f(y + 0.5 * dt * k2)
    k4 = f(y + dt * k3)
    return y + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def jacobian(f, w, step=1e-5):
    """Central-difference Jacobian ``J[j, k] = d f_j / d w_k``."""
    w = np.asarray(w, dtype=float)
    n = w.size
    jac = np.empty((n, n))
    for k in range(n):
        e = np.zeros(n)
        e[k] = step
        jac[:, k] = (f(w + e) - f(w - e)) / (2.0 * step)
    return jac


def hessian_term(f, w, cov, step=1e-3, f0=None):
    """``1/2 sum_kl cov_kl d_k d_l f(w)`` via second differences along cov eigenvectors."""
    evals, evecs = np.linalg.eigh(cov)
    f0 = f(w) if f0 is None else f0
    out = np.zeros_like(f0)
    scale = max(float(np.max(np.abs(evals), initial=0.0)), 1e-300)
    for lam_m, v in zip(evals, evecs.T):
        if lam_m <= 1e-14 * scale:
            continue
        d2 = (f(w + step * v) - 2.0 * f0 + f(w - step * v)) / (step * step)
        out += 0.5 * lam_m * d2
    return out


def _reference(task: TaskSpec):
    ref = task.coding_direction
    if not np.any(ref):
        ref = task.mu_pos if np.any(task.mu_pos) else np.eye(task.dim)[0]
    return ref


def integrate_cov_flow(task: TaskSpec, rule: RuleConfig, state0: WeightState, cfg: FlowConfig,
                       reference=None, keep_cov: bool = False) -> Trajectory:
    """Jointly integrate mean and covariance with fixed-step RK4."""
    f = drift_fn(task, rule)
    n = task.dim
    if state0.mean.size != n:
        raise ValueError("state dimension does not match task")
    h_j = cfg.jacobian_step

    def rhs(y):
        m = y[:n]
        c = y[n:].reshape(n, n)
        f0 = f(m)
        if not np.any(c):
            return np.concatenate([f0, np.zeros(n * n)])
        jac = jacobian(f, m, h_j)
        dc = c @ jac.T + jac @ c
        dm = f0
        if cfg.hessian_correction:
            dm = f0 + hessian_term(f, m, c, cfg.hessian_step, f0)
        return np.concatenate([dm, dc.ravel()])

    y = np.concatenate([state0.mean, state0.cov.ravel()])
    ts, means, trs, covs, hnorms = [], [], [], [], []

    def record(t, y):
        m = y[:n]
        c = y[n:].reshape(n, n)
        ts.append(t)
        means.append(m.copy())
        trs.append(float(np.trace(c)))
        if keep_cov:
            covs.append(c.copy())
        if cfg.hessian_correction:
            hnorms.append(float(np.linalg.norm(hessian_term(f, m, c, cfg.hessian_step)))
                          if np.any(c) else 0.0)

    status = "ok"
    t0 = state0.t
    record(t0, y)
    for step in range(1, cfg.n_steps + 1):
        y = rk4_step(rhs, y, cfg.dt)
        c = y[n:].reshape(n, n)
        y[n:] = (0.5 * (c + c.T)).ravel()
        if not np.all(np.isfinite(y)) or np.linalg.norm(y[:n]) > DIVERGENCE_NORM:
            status = "diverged"
            if np.all(np.isfinite(y)):
                record(t0 + step * cfg.dt, y)
            break
        if step % cfg.record_every == 0 or step == cfg.n_steps:
            record(t0 + step * cfg.dt, y)

    return Trajectory(
        t=np.array(ts),
        mean=np.array(means),
        reference=_reference(task) if reference is None else np.asarray(reference, dtype=float),
        tr_cov=np.array(trs),
        cov=np.array(covs) if keep_cov else None,
        hessian_norm=np.array(hnorms) if cfg.hessian_correction else None,
        status=status,
        task=task,
    )


def integrate_mean_flow(task: TaskSpec, rule: RuleConfig, w0, cfg: FlowConfig,
                        reference=None, stop_when=None) -> Trajectory:
    """Mean flow from a delta initial condition (covariance stays zero).

    ``stop_when(t, w)`` may end the integration early (status ``"stopped"``);
    the stopping state is always recorded.
    """
    f = drift_fn(task, rule)
    w = np.asarray(w0, dtype=float).copy()
    if w.size != task.dim or not np.all(np.isfinite(w)):
        raise ValueError("w0 must be a finite vector of the task dimension")
    ts, means = [0.0], [w.copy()]
    status = "ok"
    for step in range(1, cfg.n_steps + 1):
        w = rk4_step(f, w, cfg.dt)
        if not np.all(np.isfinite(w)) or np.linalg.norm(w) > DIVERGENCE_NORM:
            status = "diverged"
            if np.all(np.isfinite(w)):
                ts.append(step * cfg.dt)
                means.append(w.copy())
            break
        stop = stop_when is not None and stop_when(step * cfg.dt, w)
        if step % cfg.record_every == 0 or step == cfg.n_steps or stop:
            ts.append(step * cfg.dt)
            means.append(w.copy())
        if stop:
            status = "stopped"
            break
    return Trajectory(
        t=np.array(ts),
        mean=np.array(means),
        reference=_reference(task) if reference is None else np.asarray(reference, dtype=float),
        tr_cov=np.zeros(len(ts)),
        status=status,
        task=task,
    )


def trcov_closed_form_rate(mu, w, cov, lam) -> float:
    """``d tr Cov / dt`` for SL in the zero-noise limit (inputs exactly ``+-mu``).

    There the drift Jacobian is ``-phi'(mu.w) mu mu' - lam I`` and
    ``phi'(z) = exp(-pi z^2 / 16) / 4``, so
    ``d tr Cov/dt = -exp(-pi (mu.w)^2 / 16) / 2 * mu' Cov mu - 2 lam tr Cov``.
    """
    mu = np.asarray(mu, dtype=float)
    cov = np.asarray(cov, dtype=float)
    m = float(mu @ np.asarray(w, dtype=float))
    return -2.0 * float(erf_sigmoid_prime(m)) * float(mu @ cov @ mu) - 2.0 * lam * float(np.trace(cov))


@dataclass(frozen=True)
class FixedPoint:
    norm: float
    direction: np.ndarray
    residual: float
    status: str = "ok"

    @property
    def weights(self) -> np.ndarray:
        return self.norm * self.direction


def reduced_residual(norm, rule: str, sigma: float, lam: float, mu_norm: float = 1.0) -> float:
    """``(1/2) d|w|^2/dt`` along the aligned ray ``w = norm * mu / |mu|``."""
    mu = np.array([mu_norm])
    return 0.5 * isotropic_rates(rule, mu, sigma, np.array([norm]), lam)[1]


def _scaled_sl_residual(norm, sigma, lam, mu_norm=1.0):
    # reduced_residual / (norm * exp(-h^2/2)); keeps its sign where both terms underflow
    c = SQRT_PI_OVER_8
    s1 = math.sqrt(1.0 + (sigma * norm * c) ** 2)
    h = mu_norm * norm * c / s1
    val = mu_norm * 0.5 * special.erfcx(h / math.sqrt(2.0))
    val -= sigma * sigma * norm * c / (math.sqrt(2.0 * math.pi) * s1)
    if lam:
        val -= lam * norm * math.exp(min(0.5 * h * h, 700.0))
    return val


def _scaled_residual(norm, rule, sigma, lam, mu_norm=1.0):
    if rule == "sl":
        return _scaled_sl_residual(norm, sigma, lam, mu_norm)
    return reduced_residual(norm, rule, sigma, lam, mu_norm) / norm


def residual_sign_changes(rule: str, sigma: float, lam: float, w_max: float = 1e3,
                          points: int = 10_000, mu_norm: float = 1.0) -> int:
    grid = np.linspace(w_max / points, w_max, points)
    signs = np.sign([_scaled_residual(x, rule, sigma, lam, mu_norm) for x in grid])
    signs = signs[signs != 0]
    return int(np.count_nonzero(np.diff(signs)))


def find_fixed_point(params: IsotropicTaskParams, rule: RuleConfig,
                     w_lo: float = 1e-8, w_hi: float = 1e3) -> FixedPoint:
    """Unique aligned fixed point of the isotropic flow.

    The fixed point lies on the ray along ``mu``; its norm is the positive root of
    the reduced one-dimensional equation, bracketed by a log-spaced scan and then
    refined with Brent's method.
    """
    if params.epsilon != 0.0:
        raise ValueError("fixed-point analysis needs an isotropic task")
    mu_norm = float(np.linalg.norm(params.mu))
    direction = params.mu / mu_norm
    sigma, lam = params.sigma, rule.lam
    if sigma == 0.0 and lam == 0.0:
        return FixedPoint(math.inf, direction, math.nan, "diverged")

    def g(x):
        return _scaled_residual(x, rule.rule, sigma, lam, mu_norm)

    grid = np.geomspace(w_lo, w_hi, 400)
    vals = np.array([g(x) for x in grid])
    idx = np.nonzero((vals[:-1] > 0) & (vals[1:] <= 0))[0]
    if idx.size == 0:
        return FixedPoint(math.inf, direction, math.nan, "diverged")
    lo, hi = grid[idx[0]], grid[idx[0] + 1]
    root = optimize.brentq(g, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    res = reduced_residual(root, rule.rule, sigma, lam, mu_norm)
    return FixedPoint(float(root), direction, float(res))
