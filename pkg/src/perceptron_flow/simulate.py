"""Monte Carlo ensembles of the literal online update rules.

All runs of an ensemble advance in lockstep as rows of one weight matrix, but
each run draws its inputs, labels and policy samples from its own random
stream keyed by ``(seed, segment, run_index)``. A run's trajectory therefore
does not depend on how many other runs share the ensemble.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .drift import ACTIVATIONS, expected_reward
from .flow import DIVERGENCE_NORM, write_columns
from .specfun import erf_sigmoid, logistic
from .task import TaskSpec, model_accuracy

BASELINE_MODES = ("ema", "analytic", "none")
_CHUNK_FLOATS = 2_000_000


class Diverged(RuntimeError):
    pass


@dataclass(frozen=True)
class BaselineConfig:
    mode: str = "ema"
    ema_decay: float = 0.99

    def __post_init__(self):
        if self.mode not in BASELINE_MODES:
            raise ValueError(f"baseline mode must be one of {BASELINE_MODES}")
        if self.mode == "ema" and not 0.0 < self.ema_decay < 1.0:
            raise ValueError("ema_decay must lie in (0, 1)")


@dataclass(frozen=True)
class SimConfig:
    eta: float = 1e-3
    steps: int = 1000
    runs: int = 10
    seed: int = 0
    activation: str = "logistic"
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    record_every: int = 10

    def __post_init__(self):
        if not self.eta >= 0.0:
            raise ValueError("eta must be nonnegative")
        if self.steps < 0 or self.runs < 1 or self.record_every < 1:
            raise ValueError("need steps >= 0, runs >= 1, record_every >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")


def activation_fn(name: str):
    return erf_sigmoid if name == "erf" else logistic


@dataclass
class EnsembleTrajectory:
    t: np.ndarray  # continuous time eta * step
    steps: np.ndarray
    weights: np.ndarray  # (records, runs, N)
    reference: np.ndarray
    task: TaskSpec | None = field(default=None, repr=False)
    status: str = "ok"
    steps_done: int = 0

    @property
    def final_weights(self) -> np.ndarray:
        return self.weights[-1]

    def stats(self, with_cov: bool = True) -> dict:
        return ensemble_stats(self.weights, self.reference, self.task, with_cov=with_cov)

    def columns(self) -> dict:
        s = self.stats(with_cov=self.weights.shape[1] > 1)
        cols = {"t": self.t}
        for key in ("alignment", "norm", "mu_dot_w", "accuracy"):
            cols[f"{key}_mean"] = s[key + "_mean"]
            cols[f"{key}_std"] = s[key + "_std"]
        cols["alignment_of_mean"] = s["alignment_of_mean"]
        cols["tr_cov"] = s["tr_cov"] if "tr_cov" in s else np.zeros(self.t.size)
        return cols

    def to_csv(self, path) -> None:
        write_columns(path, self.columns())


def ensemble_stats(weights, reference, task: TaskSpec | None = None, with_cov: bool = True) -> dict:
    """Ensemble mean/covariance and per-run observables averaged over runs.

    ``weights`` has shape ``(records, runs, N)``. Covariances use the unbiased
    ``runs - 1`` normalisation and need at least two runs.
    """
    weights = np.asarray(weights, dtype=float)
    if weights.ndim == 2:
        weights = weights[None]
    _, runs, _ = weights.shape
    if with_cov and runs < 2:
        raise ValueError("covariance needs at least two runs")
    ref = np.asarray(reference, dtype=float)
    ref_norm = np.linalg.norm(ref)
    mean = weights.mean(axis=1)
    norms = np.linalg.norm(weights, axis=2)
    proj = weights @ ref
    with np.errstate(invalid="ignore", divide="ignore"):
        align = np.where(norms > 0, proj / (ref_norm * norms), np.nan)
        mean_norm = np.linalg.norm(mean, axis=1)
        align_of_mean = np.where(mean_norm > 0, mean @ ref / (ref_norm * mean_norm), np.nan)
    with warnings.catch_warnings():
        # alignment is undefined (nan) for every run at w = 0
        warnings.simplefilter("ignore", RuntimeWarning)
        align_mean, align_std = np.nanmean(align, axis=1), np.nanstd(align, axis=1)
    out = {
        "mean": mean,
        "alignment_mean": align_mean,
        "alignment_std": align_std,
        "alignment_of_mean": align_of_mean,
        "norm_mean": norms.mean(axis=1),
        "norm_std": norms.std(axis=1),
        "mu_dot_w_mean": proj.mean(axis=1),
        "mu_dot_w_std": proj.std(axis=1),
    }
    if task is not None:
        acc = np.array([[model_accuracy(task, w) for w in rec] for rec in weights])
        out["accuracy_mean"] = acc.mean(axis=1)
        out["accuracy_std"] = acc.std(axis=1)
    else:
        out["accuracy_mean"] = out["accuracy_std"] = np.full(weights.shape[0], np.nan)
    if with_cov:
        centred = weights - mean[:, None, :]
        cov = np.einsum("rki,rkj->rij", centred, centred) / (runs - 1)
        out["cov"] = cov
        out["tr_cov"] = np.einsum("rii->r", cov)
    return out


class _Streams:
    """Per-run generators yielding pre-drawn chunks of inputs and uniforms.

    Each step of a run consumes ``N + 2`` consecutive uniforms from that run's
    generator (label, input noise via the inverse normal CDF, policy), so the
    sequence a run sees does not depend on the chunk size.
    """

    def __init__(self, task: TaskSpec, runs: int, seed: int, segment: int, need_policy: bool):
        self.task = task
        self.need_policy = need_policy
        self.rngs = [np.random.default_rng([seed, segment, r]) for r in range(runs)]
        self.chunk = int(max(1, min(4096, _CHUNK_FLOATS // max(1, runs * (task.dim + 2)))))
        self._fac_pos = task.factor(1)
        self._fac_neg = task.factor(-1)
        self._diag = (np.count_nonzero(self._fac_pos - np.diag(np.diag(self._fac_pos))) == 0
                      and np.count_nonzero(self._fac_neg - np.diag(np.diag(self._fac_neg))) == 0)
        self._buf = None
        self._pos = 0

    def _refill(self):
        n, c = self.task.dim, self.chunk
        runs = len(self.rngs)
        raw = np.empty((c, runs, n + 2))
        for r, rng in enumerate(self.rngs):
            raw[:, r, :] = rng.random((c, n + 2))
        labels = np.where(raw[..., 0] < 0.5, 1.0, -1.0)
        # random() returns k / 2^53; the half-ulp offset keeps ndtri finite
        z = special.ndtri(raw[..., 1:n + 1] + 2.0 ** -54)
        u = raw[..., n + 1] if self.need_policy else None
        pos = (labels > 0)[..., None]
        if self._diag:
            noise_pos = z * np.diag(self._fac_pos)
            noise_neg = z * np.diag(self._fac_neg)
        else:
            noise_pos = z @ self._fac_pos.T
            noise_neg = z @ self._fac_neg.T
        x = np.where(pos, self.task.mu_pos + noise_pos, self.task.mu_neg + noise_neg)
        self._buf = (x, labels, u)
        self._pos = 0

    def next(self):
        if self._buf is None or self._pos >= self.chunk:
            self._refill()
        x, labels, u = self._buf
        i = self._pos
        self._pos += 1
        return x[i], labels[i], (u[i] if u is not None else None)


def _initial_weights(w0, runs: int, dim: int) -> np.ndarray:
    w0 = np.asarray(w0, dtype=float)
    if w0.ndim == 1:
        if w0.size != dim:
            raise ValueError("w0 has the wrong dimension")
        return np.tile(w0, (runs, 1))
    if w0.shape != (runs, dim):
        raise ValueError(f"w0 must have shape ({dim},) or ({runs}, {dim})")
    return w0.copy()


def _run(task: TaskSpec, lam: float, w0, cfg: SimConfig, rule: str, segment: int,
         stop_when, reference, t0: float):
    w = _initial_weights(w0, cfg.runs, task.dim)
    act = activation_fn(cfg.activation)
    streams = _Streams(task, cfg.runs, cfg.seed, segment, need_policy=(rule == "rl"))
    baseline = np.zeros(cfg.runs)
    decay = cfg.baseline.ema_decay
    eta = cfg.eta
    steps_rec, weights_rec = [0], [w.copy()]
    status = "ok"
    done = 0
    for step in range(1, cfg.steps + 1):
        x, y, u = streams.next()
        z = np.einsum("ri,ri->r", w, x)
        if rule == "sl":
            coef = 0.5 * (y + 1.0) - act(z)
        else:
            y_hat = np.where(u < act(z), 1.0, -1.0)
            reward = y * y_hat
            mode = cfg.baseline.mode
            if mode == "analytic":
                baseline = np.array([expected_reward(task, wr) for wr in w])
            coef = y_hat * (reward - baseline) * act(-y_hat * z)
            if mode == "ema":
                baseline = decay * baseline + (1.0 - decay) * reward
        w += eta * (coef[:, None] * x - lam * w)
        done = step
        if np.max(np.abs(w)) > DIVERGENCE_NORM / np.sqrt(task.dim) and \
                np.max(np.linalg.norm(w, axis=1)) > DIVERGENCE_NORM:
            status = "diverged"
            steps_rec.append(step)
            weights_rec.append(w.copy())
            break
        stop = stop_when is not None and stop_when(step, w)
        if step % cfg.record_every == 0 or step == cfg.steps or stop:
            steps_rec.append(step)
            weights_rec.append(w.copy())
        if stop:
            status = "stopped"
            break
    steps_arr = np.array(steps_rec)
    ref = task.coding_direction if reference is None else np.asarray(reference, dtype=float)
    traj = EnsembleTrajectory(t=t0 + eta * steps_arr, steps=steps_arr, weights=np.array(weights_rec),
                              reference=ref, task=task, status=status, steps_done=done)
    return traj


def run_sl(task: TaskSpec, lam: float, w0, cfg: SimConfig, segment: int = 0,
           stop_when=None, reference=None, t0: float = 0.0) -> EnsembleTrajectory:
    """Online cross-entropy SGD: ``w += eta ((y~ - act(w.x)) x - lam w)``.

    ``stop_when(step, weights)`` may end the run early (status ``"stopped"``).
    """
    return _run(task, lam, w0, cfg, "sl", segment, stop_when, reference, t0)


def run_rl(task: TaskSpec, lam: float, w0, cfg: SimConfig, segment: int = 0,
           stop_when=None, reference=None, t0: float = 0.0) -> EnsembleTrajectory:
    """REINFORCE with baseline: ``w += eta (y_hat delta act(-y_hat w.x) x - lam w)``.

    The output ``y_hat = +-1`` is sampled with ``P(y_hat = 1) = act(w.x)``;
    ``delta = y y_hat - b`` with ``b`` the running (EMA), exact (analytic) or
    zero baseline.
    """
    return _run(task, lam, w0, cfg, "rl", segment, stop_when, reference, t0)


def run(rule: str, task: TaskSpec, lam: float, w0, cfg: SimConfig, **kwargs) -> EnsembleTrajectory:
    if rule == "sl":
        return run_sl(task, lam, w0, cfg, **kwargs)
    if rule == "rl":
        return run_rl(task, lam, w0, cfg, **kwargs)
    raise ValueError(f"unknown rule {rule!r}")
