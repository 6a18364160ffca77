"""Closed-form expected updates for the SL and RL perceptron rules.

Everything is assembled from four Gaussian moments of the erf-sigmoid. For
``x ~ N(mu, Sigma)`` write ``w_t = w sqrt(pi/8)``, ``a = mu . w_t`` and
``b^2 = w_t' Sigma w_t``, so that ``phi(w . x) = Phi(s)`` with ``s ~ N(a, b^2)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .specfun import (INV_SQRT_2PI, SQRT_PI_OVER_8, erfc, normal_cdf,
                      owens_t)
from .task import TaskSpec

RULES = ("sl", "rl")
ACTIVATIONS = ("erf", "logistic")


@dataclass(frozen=True)
class RuleConfig:
    rule: str = "sl"
    lam: float = 0.0
    activation: str = "erf"

    def __post_init__(self):
        if self.rule not in RULES:
            raise ValueError(f"rule must be one of {RULES}, got {self.rule!r}")
        if not self.lam >= 0.0:
            raise ValueError("lambda must be nonnegative")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")


@dataclass(frozen=True)
class ProjectionStats:
    w_tilde: np.ndarray
    a: float
    b: float
    sigma_w: np.ndarray  # Sigma @ w_tilde

    @classmethod
    def compute(cls, mu, sigma, w) -> "ProjectionStats":
        w_tilde = np.asarray(w, dtype=float) * SQRT_PI_OVER_8
        sigma_w = sigma @ w_tilde
        b2 = max(float(w_tilde @ sigma_w), 0.0)
        return cls(w_tilde, float(mu @ w_tilde), math.sqrt(b2), sigma_w)

    @property
    def s1(self) -> float:
        return math.sqrt(1.0 + self.b * self.b)

    @property
    def s2(self) -> float:
        return math.sqrt(1.0 + 2.0 * self.b * self.b)

    @property
    def h(self) -> float:
        return self.a / self.s1

    @property
    def density_term(self) -> float:
        """``exp(-a^2 / 2(1+b^2)) / (sqrt(2 pi) sqrt(1+b^2))``"""
        h = self.h
        return INV_SQRT_2PI * math.exp(-0.5 * h * h) / self.s1


def gauss_phi_mean(mu, sigma, w) -> float:
    """``<phi(w . x)>`` for ``x ~ N(mu, sigma)``."""
    p = ProjectionStats.compute(mu, sigma, w)
    return float(normal_cdf(p.h))


def gauss_phi_x_mean(mu, sigma, w) -> np.ndarray:
    """``<phi(w . x) x>`` for ``x ~ N(mu, sigma)``."""
    p = ProjectionStats.compute(mu, sigma, w)
    return mu * float(normal_cdf(p.h)) + p.sigma_w * p.density_term


def gauss_phi2_mean(mu, sigma, w) -> float:
    """``<phi^2(w . x)>`` via Owen's T."""
    p = ProjectionStats.compute(mu, sigma, w)
    return float(normal_cdf(p.h)) - 2.0 * owens_t(p.h, 1.0 / p.s2)


def gauss_phi2_x_mean(mu, sigma, w) -> np.ndarray:
    """``<phi^2(w . x) x>`` for ``x ~ N(mu, sigma)``."""
    p = ProjectionStats.compute(mu, sigma, w)
    second = float(normal_cdf(p.h)) - 2.0 * owens_t(p.h, 1.0 / p.s2)
    return mu * second + 2.0 * p.sigma_w * p.density_term * float(normal_cdf(p.a / (p.s1 * p.s2)))


def sl_drift(task: TaskSpec, w, lam: float = 0.0) -> np.ndarray:
    """Expected SL update ``<(y~ - phi(w.x)) x> - lam w``, with ``y~ = (y + 1) / 2``."""
    w = np.asarray(w, dtype=float)
    pp = ProjectionStats.compute(task.mu_pos, task.sigma_pos, w)
    pm = ProjectionStats.compute(task.mu_neg, task.sigma_neg, w)
    out = 0.5 * task.mu_pos * (1.0 - float(normal_cdf(pp.h)))
    out -= 0.5 * pp.sigma_w * pp.density_term
    out -= 0.5 * task.mu_neg * float(normal_cdf(pm.h))
    out -= 0.5 * pm.sigma_w * pm.density_term
    if lam:
        out -= lam * w
    return out


def _rl_class_term(mu, p: ProjectionStats) -> np.ndarray:
    # <phi(w.x) phi(-w.x) x> for one class, Owen's-T form
    inner = p.a / (p.s1 * p.s2)
    return (p.sigma_w * p.density_term * (1.0 - 2.0 * float(normal_cdf(inner)))
            + 2.0 * mu * owens_t(p.h, 1.0 / p.s2))


def rl_drift(task: TaskSpec, w, lam: float = 0.0) -> np.ndarray:
    """Expected REINFORCE update; the reward baseline drops out of the mean."""
    w = np.asarray(w, dtype=float)
    pp = ProjectionStats.compute(task.mu_pos, task.sigma_pos, w)
    pm = ProjectionStats.compute(task.mu_neg, task.sigma_neg, w)
    out = _rl_class_term(task.mu_pos, pp) - _rl_class_term(task.mu_neg, pm)
    if lam:
        out -= lam * w
    return out


def rl_drift_from_moments(task: TaskSpec, w, lam: float = 0.0) -> np.ndarray:
    """Same quantity as :func:`rl_drift`, composed as ``<phi x> - <phi^2 x>`` per class."""
    w = np.asarray(w, dtype=float)
    out = np.zeros(task.dim)
    for sign in (1, -1):
        mu, sigma = task.class_params(sign)
        out += sign * (gauss_phi_x_mean(mu, sigma, w) - gauss_phi2_x_mean(mu, sigma, w))
    return out - lam * w


def drift(task: TaskSpec, w, rule: RuleConfig) -> np.ndarray:
    if rule.rule == "sl":
        return sl_drift(task, w, rule.lam)
    return rl_drift(task, w, rule.lam)


def drift_fn(task: TaskSpec, rule: RuleConfig):
    """Return ``f(w)`` evaluating the drift for fixed task and rule."""
    base = sl_drift if rule.rule == "sl" else rl_drift
    lam = rule.lam
    return lambda w: base(task, w, lam)


def expected_reward(task: TaskSpec, w) -> float:
    """``<y y_hat>`` under the stochastic erf-sigmoid policy."""
    return (gauss_phi_mean(task.mu_pos, task.sigma_pos, w)
            - gauss_phi_mean(task.mu_neg, task.sigma_neg, w))


def _iso_common(mu, sigma, w):
    w = np.asarray(w, dtype=float)
    w_tilde = w * SQRT_PI_OVER_8
    m = float(mu @ w_tilde)
    b2 = sigma * sigma * float(w_tilde @ w_tilde)
    s1 = math.sqrt(1.0 + b2)
    h = m / s1
    dens = INV_SQRT_2PI * math.exp(-0.5 * h * h) / s1
    return w, w_tilde, m, b2, s1, h, dens


def isotropic_sl_rates(mu, sigma, w, lam: float = 0.0):
    """``(d(mu.w)/dt, d|w|^2/dt)`` for means ``+-mu`` and covariance ``sigma^2 I``."""
    mu = np.asarray(mu, dtype=float)
    w, w_tilde, m, b2, s1, h, dens = _iso_common(mu, sigma, w)
    miss = 1.0 - float(normal_cdf(h))
    mu_w = float(mu @ w)
    d_mu_w = float(mu @ mu) * miss - sigma * sigma * m * dens
    d_w2 = 2.0 * mu_w * miss - sigma * sigma * float(w @ w_tilde) * 2.0 * dens
    return d_mu_w - lam * mu_w, d_w2 - 2.0 * lam * float(w @ w)


def isotropic_rl_rates(mu, sigma, w, lam: float = 0.0):
    """RL counterpart of :func:`isotropic_sl_rates`."""
    mu = np.asarray(mu, dtype=float)
    w, w_tilde, m, b2, s1, h, dens = _iso_common(mu, sigma, w)
    s2 = math.sqrt(1.0 + 2.0 * b2)
    t = owens_t(h, 1.0 / s2)
    # Erf(h / sqrt(2) / s2) = 1 - erfc(.)
    erf_term = 1.0 - float(erfc(m / (s1 * math.sqrt(2.0 + 4.0 * b2))))
    mu_w = float(mu @ w)
    d_mu_w = 4.0 * float(mu @ mu) * t - 2.0 * sigma * sigma * m * dens * erf_term
    d_w2 = 8.0 * mu_w * t - 4.0 * sigma * sigma * float(w @ w_tilde) * dens * erf_term
    return d_mu_w - lam * mu_w, d_w2 - 2.0 * lam * float(w @ w)


def isotropic_rates(rule: str, mu, sigma, w, lam: float = 0.0):
    if rule == "sl":
        return isotropic_sl_rates(mu, sigma, w, lam)
    return isotropic_rl_rates(mu, sigma, w, lam)
