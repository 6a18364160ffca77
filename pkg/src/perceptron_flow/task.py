"""Binary Gaussian classification task.

Inputs are drawn with equal prior from ``N(mu_pos, sigma_pos)`` (label +1) and
``N(mu_neg, sigma_neg)`` (label -1). The perceptron has no bias, so every
decision boundary passes through the origin.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .specfun import normal_cdf

PSD_TOL = 1e-10


def clip_psd(cov, tol=PSD_TOL, name="covariance"):
    """Symmetrise ``cov`` and clip small negative eigenvalues to zero.

    Raises ``ValueError`` when the smallest eigenvalue is below ``-tol``
    (scaled by the largest magnitude eigenvalue when that exceeds one).
    """
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ValueError(f"{name} must be square, got shape {cov.shape}")
    if not np.all(np.isfinite(cov)):
        raise ValueError(f"{name} has non-finite entries")
    cov = 0.5 * (cov + cov.T)
    evals, evecs = np.linalg.eigh(cov)
    scale = max(1.0, float(np.max(np.abs(evals), initial=0.0)))
    if evals.size and evals[0] < -tol * scale:
        raise ValueError(f"{name} is not positive semidefinite (min eigenvalue {evals[0]:.3g})")
    if evals.size and evals[0] < 0.0:
        evals = np.clip(evals, 0.0, None)
        cov = (evecs * evals) @ evecs.T
        cov = 0.5 * (cov + cov.T)
    return cov


def _sqrt_factor(cov):
    """Matrix ``L`` with ``L @ L.T == cov``, via symmetric eigendecomposition."""
    if np.count_nonzero(cov - np.diag(np.diag(cov))) == 0:
        return np.diag(np.sqrt(np.clip(np.diag(cov), 0.0, None)))
    evals, evecs = np.linalg.eigh(cov)
    return evecs * np.sqrt(np.clip(evals, 0.0, None))


@dataclass(frozen=True, eq=False)
class TaskSpec:
    mu_pos: np.ndarray
    mu_neg: np.ndarray
    sigma_pos: np.ndarray
    sigma_neg: np.ndarray
    _factors: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        mu_pos = np.asarray(self.mu_pos, dtype=float).ravel()
        mu_neg = np.asarray(self.mu_neg, dtype=float).ravel()
        n = mu_pos.size
        if n < 1 or mu_neg.size != n:
            raise ValueError("class means must be non-empty vectors of equal length")
        if not (np.all(np.isfinite(mu_pos)) and np.all(np.isfinite(mu_neg))):
            raise ValueError("class means have non-finite entries")
        sigma_pos = clip_psd(self.sigma_pos, name="sigma_pos")
        sigma_neg = clip_psd(self.sigma_neg, name="sigma_neg")
        if sigma_pos.shape != (n, n) or sigma_neg.shape != (n, n):
            raise ValueError(f"covariances must have shape ({n}, {n})")
        for name, value in [("mu_pos", mu_pos), ("mu_neg", mu_neg),
                            ("sigma_pos", sigma_pos), ("sigma_neg", sigma_neg)]:
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def dim(self) -> int:
        return self.mu_pos.size

    @property
    def coding_direction(self) -> np.ndarray:
        """Half the difference of the class means; equals ``mu`` for ``mu_pos = -mu_neg = mu``."""
        return 0.5 * (self.mu_pos - self.mu_neg)

    def factor(self, label: int) -> np.ndarray:
        """Cached square-root factor of the class covariance for ``label`` in {+1, -1}."""
        if label not in self._factors:
            cov = self.sigma_pos if label > 0 else self.sigma_neg
            self._factors[label] = _sqrt_factor(cov)
        return self._factors[label]

    def class_params(self, label: int):
        return (self.mu_pos, self.sigma_pos) if label > 0 else (self.mu_neg, self.sigma_neg)

    def rotated(self, rot: np.ndarray) -> "TaskSpec":
        return TaskSpec(rot @ self.mu_pos, rot @ self.mu_neg,
                        rot @ self.sigma_pos @ rot.T, rot @ self.sigma_neg @ rot.T)

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "mu_pos": self.mu_pos.tolist(),
            "mu_neg": self.mu_neg.tolist(),
            "sigma_pos": self.sigma_pos.tolist(),
            "sigma_neg": self.sigma_neg.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TaskSpec":
        """Build from a full specification or the ``{mu, sigma, epsilon}`` shorthand."""
        if "sigma_pos" in data:
            task = cls(data["mu_pos"], data["mu_neg"], data["sigma_pos"], data["sigma_neg"])
        else:
            dim = int(data["dim"])
            mu = data.get("mu")
            if mu is None:
                mu = np.zeros(dim)
                mu[0] = 1.0
            task = IsotropicTaskParams(np.asarray(mu, dtype=float), float(data.get("sigma", 1.0)),
                                       float(data.get("epsilon", 0.0))).to_task()
        if "dim" in data and int(data["dim"]) != task.dim:
            raise ValueError(f"dim {data['dim']} does not match means of length {task.dim}")
        return task

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load_json(cls, path) -> "TaskSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class IsotropicTaskParams:
    """Symmetric task ``mu_pos = -mu_neg = mu`` with noise split along/orthogonal to ``mu``.

    The covariance is ``sigma^2 (I + eps (P - (I - P) / (N - 1)))`` with ``P`` the
    projector onto ``mu``: variance ``sigma^2 (1 + eps)`` along ``mu`` and the
    remaining ``-eps`` spread equally over the orthogonal directions, so the
    total variance stays ``N sigma^2``. For ``N = 2`` this is exactly
    ``sigma_par^2 = 1 + eps``, ``sigma_perp^2 = 1 - eps`` (times ``sigma^2``).
    """

    mu: np.ndarray
    sigma: float = 1.0
    epsilon: float = 0.0

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float).ravel()
        if not np.any(mu):
            raise ValueError("mu must be nonzero")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if not -1.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [-1, 1]")
        if self.epsilon != 0.0 and mu.size < 2:
            raise ValueError("anisotropy needs dim >= 2")
        object.__setattr__(self, "mu", mu)

    @classmethod
    def standard(cls, dim: int, sigma: float = 1.0, epsilon: float = 0.0) -> "IsotropicTaskParams":
        mu = np.zeros(dim)
        mu[0] = 1.0
        return cls(mu, sigma, epsilon)

    @property
    def dim(self) -> int:
        return self.mu.size

    def covariance(self) -> np.ndarray:
        n = self.dim
        eye = np.eye(n)
        if self.epsilon == 0.0:
            return self.sigma ** 2 * eye
        u = self.mu / np.linalg.norm(self.mu)
        proj = np.outer(u, u)
        return self.sigma ** 2 * (eye + self.epsilon * (proj - (eye - proj) / (n - 1)))

    def to_task(self) -> TaskSpec:
        cov = self.covariance()
        return TaskSpec(self.mu, -self.mu, cov, cov.copy())


def sample(task: TaskSpec, rng_seed: int, count: int):
    """Draw ``count`` labelled inputs; returns ``(x, y)`` with shapes ``(count, N)`` and ``(count,)``."""
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(rng_seed)
    y = np.where(rng.random(count) < 0.5, 1, -1)
    z = rng.standard_normal((count, task.dim))
    x = np.empty((count, task.dim))
    for label in (1, -1):
        sel = y == label
        mu, _ = task.class_params(label)
        x[sel] = mu + z[sel] @ task.factor(label).T
    return x, y


def _class_correct(mean_proj, var_proj, sign):
    # P(sign * w.x > 0) for w.x ~ N(mean_proj, var_proj)
    if var_proj <= 0.0:
        if mean_proj == 0.0:
            raise ValueError("decision undefined: class lies on the boundary with zero variance")
        return 1.0 if sign * mean_proj > 0 else 0.0
    return float(normal_cdf(sign * mean_proj / math.sqrt(var_proj)))


def model_accuracy(task: TaskSpec, w) -> float:
    """Probability that ``sign(w . x)`` is correct under the Gaussian model.

    ``w = 0`` is a tie for every input; ties count as a coin flip, giving 1/2.
    """
    w = np.asarray(w, dtype=float)
    if not np.any(w):
        return 0.5
    acc_pos = _class_correct(float(task.mu_pos @ w), float(w @ task.sigma_pos @ w), +1)
    acc_neg = _class_correct(float(task.mu_neg @ w), float(w @ task.sigma_neg @ w), -1)
    return 0.5 * (acc_pos + acc_neg)
