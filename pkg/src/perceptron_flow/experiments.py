"""Drivers for the learning-speed, anisotropy, covariance-decay, fixed-point
and forgetting experiments."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .drift import RuleConfig
from .flow import (FlowConfig, WeightState, find_fixed_point, integrate_cov_flow,
                   integrate_mean_flow, write_columns)
from .simulate import SimConfig, run
from .task import IsotropicTaskParams


class NotReached(RuntimeError):
    """A threshold was not crossed within the time or step budget."""


@dataclass
class SweepResult:
    parameter: str
    grid: np.ndarray
    outcome: np.ndarray
    rule: str
    outcome_name: str = "time"
    status: list = field(default_factory=list)

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.outcome = np.asarray(self.outcome, dtype=float)
        if self.grid.size > 1 and np.any(np.diff(self.grid) <= 0):
            raise ValueError("sweep grid must be strictly increasing")
        if not self.status:
            self.status = ["ok" if np.isfinite(v) else "not-reached" for v in self.outcome]

    def columns(self) -> dict:
        return {self.parameter: self.grid, self.outcome_name: self.outcome}

    def to_csv(self, path) -> None:
        write_columns(path, self.columns())


def crossing_time(t, values, threshold: float) -> float:
    """First time ``values`` reaches ``threshold``, interpolating linearly.

    Returns ``nan`` if it never does.
    """
    t = np.asarray(t, dtype=float)
    values = np.asarray(values, dtype=float)
    above = np.nonzero(values >= threshold)[0]
    if above.size == 0:
        return math.nan
    i = above[0]
    if i == 0:
        return float(t[0])
    v0, v1 = values[i - 1], values[i]
    return float(t[i - 1] + (threshold - v0) / (v1 - v0) * (t[i] - t[i - 1]))


def tilted_start(mu, angle_deg: float = 60.0, scale: float = 0.5) -> np.ndarray:
    """``scale`` times the unit vector at ``angle_deg`` from ``mu``.

    The orthogonal part is the first coordinate axis made orthogonal to ``mu``,
    so the vector is reproducible in any dimension >= 2.
    """
    mu = np.asarray(mu, dtype=float)
    if mu.size < 2:
        raise ValueError("need at least two dimensions for a tilted start")
    u = mu / np.linalg.norm(mu)
    for k in range(mu.size):
        e = np.zeros(mu.size)
        e[k] = 1.0
        v = e - (e @ u) * u
        if np.linalg.norm(v) > 1e-6:
            v /= np.linalg.norm(v)
            break
    a = math.radians(angle_deg)
    return scale * (math.cos(a) * u + math.sin(a) * v)


def default_mu(dim: int) -> np.ndarray:
    mu = np.zeros(dim)
    mu[0] = 1.0
    return mu


def time_to_alignment(params: IsotropicTaskParams, rule: RuleConfig, threshold: float = 0.8,
                      w0=None, dt: float = 0.01, t_max: float = 100.0,
                      record_every: int = 1) -> float:
    """Interpolated first time the mean-flow alignment reaches ``threshold``.

    Raises :class:`NotReached` if that does not happen before ``t_max``.
    """
    task = params.to_task()
    w0 = tilted_start(params.mu) if w0 is None else np.asarray(w0, dtype=float)
    mu = params.mu / np.linalg.norm(params.mu)

    def reached(t, w):
        n = np.linalg.norm(w)
        return n > 0 and w @ mu / n >= threshold

    cfg = FlowConfig(dt=dt, t_max=t_max, record_every=record_every)
    traj = integrate_mean_flow(task, rule, w0, cfg, reference=params.mu, stop_when=reached)
    t_cross = crossing_time(traj.t, traj.alignment, threshold)
    if math.isnan(t_cross):
        raise NotReached(f"alignment stayed below {threshold} up to t={traj.t[-1]:g} ({traj.status})")
    return t_cross


def _sweep(name, grid, make_params, rule, **kw) -> SweepResult:
    out, status = [], []
    for value in grid:
        try:
            out.append(time_to_alignment(make_params(value), rule, **kw))
            status.append("ok")
        except NotReached:
            out.append(math.nan)
            status.append("not-reached")
    return SweepResult(name, grid, out, rule.rule, "time_to_threshold", status)


def noise_sweep(rule: RuleConfig, sigmas=(0.25, 0.5, 1.0, 2.0), dim: int = 2,
                **kw) -> SweepResult:
    """Time to threshold alignment for isotropic noise levels ``sigmas``."""
    mu = default_mu(dim)
    return _sweep("sigma", sigmas, lambda s: IsotropicTaskParams(mu, s, 0.0), rule, **kw)


def anisotropy_sweep(rule: RuleConfig, epsilons=(-0.5, -0.25, 0.0, 0.25, 0.5), sigma: float = 1.0,
                     dim: int = 2, **kw) -> SweepResult:
    """Time to threshold alignment as noise is moved into (``eps > 0``) or out of
    the coding direction at fixed total variance."""
    for e in epsilons:
        if not -1.0 < e < 1.0:
            raise ValueError("epsilon must lie in (-1, 1)")
    mu = default_mu(dim)
    return _sweep("epsilon", epsilons, lambda e: IsotropicTaskParams(mu, sigma, e), rule, **kw)


def anisotropy_slope(rule: RuleConfig, h: float = 0.01, sigma: float = 1.0, dim: int = 2,
                     **kw) -> float:
    """Central-difference slope of the time to threshold in ``epsilon`` at 0."""
    res = anisotropy_sweep(rule, (-h, h), sigma=sigma, dim=dim, **kw)
    return float((res.outcome[1] - res.outcome[0]) / (2.0 * h))


@dataclass
class ExpFit:
    """Least-squares fit of ``log y = log A - rate * x``."""

    rate: float
    log_amplitude: float
    r2: float
    rate_se: float
    points: int
    ci_level: float = 0.95

    @property
    def ci(self) -> tuple:
        if self.points <= 2 or not np.isfinite(self.rate_se):
            return (math.nan, math.nan)
        q = stats.t.ppf(0.5 + 0.5 * self.ci_level, self.points - 2)
        return (self.rate - q * self.rate_se, self.rate + q * self.rate_se)


def fit_exponential(x, y, ci_level: float = 0.95) -> ExpFit:
    """OLS on ``log y``; every ``y`` must be positive and at least two points given."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2 or np.any(y <= 0):
        raise ValueError("need at least two positive points")
    res = stats.linregress(x, np.log(y))
    n = x.size
    r2 = res.rvalue ** 2 if n > 2 else 1.0
    se = res.stderr if n > 2 else math.nan
    return ExpFit(-res.slope, res.intercept, float(r2), float(se), n, ci_level)


@dataclass
class DecayResult:
    sweep: SweepResult
    trajectories: list


def covariance_decay(rule: RuleConfig, sigmas=(0.0, 0.5, 1.0), cov0=None, dim: int = 10,
                     w0=None, dt: float = 0.01, t_max: float = 20.0, tail: float = 0.5,
                     underflow: float = 1e-250) -> DecayResult:
    """Exponential decay rate of ``tr Cov`` under the covariance flow.

    The rate is the negated least-squares slope of ``log tr Cov`` over the last
    ``tail`` fraction of the window, restricted to values above ``underflow``.
    """
    if not rule.lam > 0:
        raise ValueError("covariance decay needs lambda > 0")
    mu = default_mu(dim)
    cov0 = 0.01 * np.eye(dim) if cov0 is None else np.asarray(cov0, dtype=float)
    if not np.any(cov0):
        raise ValueError("cov0 must be nonzero")
    w0 = tilted_start(mu) if w0 is None else np.asarray(w0, dtype=float)
    cfg = FlowConfig(dt=dt, t_max=t_max, record_every=1)
    rates, trajs, status = [], [], []
    for s in sigmas:
        task = IsotropicTaskParams(mu, s, 0.0).to_task()
        traj = integrate_cov_flow(task, rule, WeightState(w0, cov0), cfg)
        trajs.append(traj)
        rates.append(decay_rate(traj.t, traj.tr_cov, tail, underflow))
        status.append(traj.status)
    return DecayResult(SweepResult("sigma", sigmas, rates, rule.rule, "decay_rate", status), trajs)


def decay_rate(t, values, tail: float = 0.5, underflow: float = 1e-250) -> float:
    t = np.asarray(t, dtype=float)
    values = np.asarray(values, dtype=float)
    ok = np.nonzero(values > underflow)[0]
    if ok.size < 2:
        return math.nan
    end = ok[-1] + 1 if ok.size == ok[-1] + 1 else ok[np.argmax(np.diff(ok) > 1)] + 1
    t, values = t[:end], values[:end]
    start = int(math.floor((1.0 - tail) * (t.size - 1)))
    return fit_exponential(t[start:], values[start:]).rate


def fixed_point_sweep(rule: RuleConfig, lambdas, sigma: float = 0.0, dim: int = 1) -> SweepResult:
    """``|w*|`` of the isotropic flow for each regularization strength."""
    mu = default_mu(dim)
    norms, status = [], []
    for lam in lambdas:
        fp = find_fixed_point(IsotropicTaskParams(mu, sigma, 0.0),
                              RuleConfig(rule.rule, lam, rule.activation))
        norms.append(fp.norm)
        status.append(fp.status)
    return SweepResult("lambda", lambdas, norms, rule.rule, "w_star_norm", status)


def task_means(num: int, dim: int, rng, geometry: str = "orthogonal") -> np.ndarray:
    """``num`` unit task means.

    ``"random"`` draws independent directions uniformly on the sphere;
    ``"orthogonal"`` additionally orthonormalizes them (needs ``num <= dim``),
    which removes chance overlaps between tasks from the forgetting curve.
    """
    m = rng.standard_normal((num, dim))
    if geometry == "orthogonal":
        if num > dim:
            raise ValueError("cannot draw more orthogonal means than dimensions")
        q, r = np.linalg.qr(m.T)
        return (q * np.sign(np.diag(r))).T
    if geometry != "random":
        raise ValueError("geometry must be 'orthogonal' or 'random'")
    return m / np.linalg.norm(m, axis=1, keepdims=True)


@dataclass
class ForgettingResult:
    rule: str
    sigma: float
    curve: np.ndarray  # alignment of the ensemble-mean weights with the first mean
    stderr: np.ndarray  # jackknife standard error of each curve value
    steps: np.ndarray  # training steps (or flow time) spent on each task
    means: np.ndarray = field(repr=False)
    status: str = "ok"

    def fit(self, min_snr: float = 2.0) -> ExpFit:
        """Exponential fit over the leading stretch of resolvable points.

        A point is resolvable if it exceeds ``min_snr`` standard errors; the fit
        window ends at the first one that does not.
        """
        ok = self.curve > min_snr * self.stderr
        n = int(np.argmin(ok)) if not ok.all() else ok.size
        if n < 2:
            raise ValueError("fewer than two resolvable points on the forgetting curve")
        return fit_exponential(np.arange(n), self.curve[:n])

    def columns(self) -> dict:
        return {"task": np.arange(self.curve.size), "alignment": self.curve,
                "stderr": self.stderr, "steps": self.steps}

    def to_csv(self, path) -> None:
        write_columns(path, self.columns())


def _alignment_of_mean(w, mu):
    m = w.mean(axis=0)
    return float(m @ mu / np.linalg.norm(m))


def _jackknife_se(w, mu) -> float:
    runs = w.shape[0]
    total = w.sum(axis=0)
    loo = (total[None, :] - w) / (runs - 1)
    vals = loo @ mu / np.linalg.norm(loo, axis=1)
    return float(np.sqrt((runs - 1) / runs * np.sum((vals - vals.mean()) ** 2)))


def forgetting_run(rule: str, num_tasks: int = 10, sigma: float = 0.1, lam: float = 10.0,
                   threshold: float = 0.8, dim: int = 500, eta: float = 1e-2, runs: int = 50,
                   seed: int = 0, activation: str = "logistic", max_steps: int = 200_000,
                   init_scale: float = 1.0, geometry: str = "orthogonal") -> ForgettingResult:
    """Sequential training on a series of tasks, simulated online.

    All ``runs`` perceptrons train in lockstep on each task until the alignment
    of their mean weight vector with that task's mean reaches ``threshold``.
    The curve records the alignment with the first task's mean after each task.
    """
    if num_tasks < 2:
        raise ValueError("need at least two tasks")
    if runs < 2:
        raise ValueError("need at least two runs")
    rng = np.random.default_rng([seed, 0xF0])
    means = task_means(num_tasks, dim, rng, geometry)
    w = init_scale * rng.standard_normal((runs, dim)) / math.sqrt(dim)
    cfg = SimConfig(eta=eta, steps=max_steps, runs=runs, seed=seed, activation=activation,
                    record_every=max_steps)
    curve, se, steps = [], [], []
    for k in range(num_tasks):
        mu = means[k]
        task = IsotropicTaskParams(mu, sigma, 0.0).to_task()

        def reached(step, weights, mu=mu):
            return _alignment_of_mean(weights, mu) >= threshold

        if reached(0, w):
            steps.append(0)
        else:
            traj = run(rule, task, lam, w, cfg, segment=k + 1, stop_when=reached, reference=mu)
            if traj.status != "stopped":
                raise NotReached(f"task {k} did not reach alignment {threshold} "
                                 f"within {max_steps} steps ({traj.status})")
            w = traj.final_weights
            steps.append(traj.steps_done)
        curve.append(_alignment_of_mean(w, means[0]))
        se.append(_jackknife_se(w, means[0]))
    return ForgettingResult(rule, sigma, np.array(curve), np.array(se), np.array(steps, dtype=float),
                            means)


def forgetting_flow(rule: str, num_tasks: int = 10, sigma: float = 0.1, lam: float = 10.0,
                    threshold: float = 0.8, dim: int = 500, inits: int = 5, seed: int = 0,
                    dt: float = 1e-3, t_max: float = 20.0,
                    init_scale: float = 1.0, geometry: str = "orthogonal") -> ForgettingResult:
    """Mean-flow counterpart of :func:`forgetting_run`.

    Each random initialization is followed deterministically; the curve is the
    average over initializations.
    """
    rng = np.random.default_rng([seed, 0xF0])
    means = task_means(num_tasks, dim, rng, geometry)
    starts = init_scale * rng.standard_normal((inits, dim)) / math.sqrt(dim)
    cfg = FlowConfig(dt=dt, t_max=t_max, record_every=10 ** 9)
    rcfg = RuleConfig(rule, lam)
    curves, times = [], []
    for w in starts:
        c, ts = [], []
        for k in range(num_tasks):
            mu = means[k]
            task = IsotropicTaskParams(mu, sigma, 0.0).to_task()

            def reached(t, v, mu=mu):
                return v @ mu / np.linalg.norm(v) >= threshold

            if reached(0.0, w):
                ts.append(0.0)
            else:
                traj = integrate_mean_flow(task, rcfg, w, cfg, reference=mu, stop_when=reached)
                if traj.status != "stopped":
                    raise NotReached(f"task {k} did not reach alignment {threshold} by t={t_max}")
                w = traj.mean[-1]
                ts.append(traj.t[-1])
            c.append(float(w @ means[0] / np.linalg.norm(w)))
        curves.append(c)
        times.append(ts)
    curves = np.array(curves)
    se = curves.std(axis=0, ddof=1) / math.sqrt(inits) if inits > 1 else np.zeros(num_tasks)
    return ForgettingResult(rule, sigma, curves.mean(axis=0), se, np.mean(times, axis=0), means)
