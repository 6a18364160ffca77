"""MNIST 0-vs-1: Gaussian-moment theory against an SGD-trained perceptron.

Digit '1' is the positive class (``y = +1``), digit '0' the negative one.
All inputs are translated by the training-set mean so that the pooled
training data is centred at the origin; the test set gets the same shift.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .drift import RuleConfig
from .flow import FlowConfig, integrate_mean_flow, write_columns
from .gabor import GaborBankConfig, gabor_features
from .idx import load_idx
from .specfun import logistic
from .task import TaskSpec, clip_psd

FEATURE_MODES = ("gabor", "raw")


@dataclass
class GaussianFit:
    mu0: np.ndarray
    mu1: np.ndarray
    sigma0: np.ndarray
    sigma1: np.ndarray
    global_shift: np.ndarray
    counts: tuple = (0, 0)
    _task: TaskSpec | None = field(default=None, repr=False, compare=False)

    @property
    def dim(self) -> int:
        return self.mu0.size

    def task(self) -> TaskSpec:
        if self._task is None:
            self._task = TaskSpec(mu_pos=self.mu1, mu_neg=self.mu0,
                                  sigma_pos=self.sigma1, sigma_neg=self.sigma0)
        return self._task


def fit_gaussians(features, labels) -> GaussianFit:
    """Per-class mean and unbiased covariance after a global zero-mean shift.

    ``labels`` may be digits ``{0, 1}`` or signs ``{-1, +1}``.
    """
    x = np.asarray(features, dtype=float)
    y = np.asarray(labels)
    pos = (y == 1)
    neg = (y == 0) | (y == -1)
    if not np.all(pos | neg):
        raise ValueError("labels must be in {0, 1} or {-1, +1}")
    if pos.sum() < 2 or neg.sum() < 2:
        raise ValueError("each class needs at least two samples")
    shift = x.mean(axis=0)
    xs = x - shift
    mu1 = xs[pos].mean(axis=0)
    mu0 = xs[neg].mean(axis=0)
    sigma1 = clip_psd(np.cov(xs[pos], rowvar=False).reshape(x.shape[1], x.shape[1]))
    sigma0 = clip_psd(np.cov(xs[neg], rowvar=False).reshape(x.shape[1], x.shape[1]))
    return GaussianFit(mu0, mu1, sigma0, sigma1, shift, (int(neg.sum()), int(pos.sum())))


def signed_labels(digits) -> np.ndarray:
    return np.where(np.asarray(digits) == 1, 1.0, -1.0)


@dataclass
class Dataset:
    train_x: np.ndarray
    train_y: np.ndarray  # +-1
    test_x: np.ndarray
    test_y: np.ndarray
    mode: str
    shift: np.ndarray


def prepare(data_dir=None, mode: str = "gabor", gabor: GaborBankConfig | None = None,
            limit: int | None = None) -> Dataset:
    """Load digits 0/1, extract features and centre on the training mean."""
    if mode not in FEATURE_MODES:
        raise ValueError(f"mode must be one of {FEATURE_MODES}")
    tr_img, tr_lab = load_idx(data_dir, "train")
    te_img, te_lab = load_idx(data_dir, "test")
    if limit is not None:
        tr_img, tr_lab = tr_img[:limit], tr_lab[:limit]
    if mode == "gabor":
        cfg = gabor or GaborBankConfig()
        tr_x, te_x = gabor_features(tr_img, cfg), gabor_features(te_img, cfg)
    else:
        tr_x, te_x = tr_img.reshape(len(tr_img), -1), te_img.reshape(len(te_img), -1)
    shift = tr_x.mean(axis=0)
    return Dataset(tr_x - shift, signed_labels(tr_lab), te_x - shift, signed_labels(te_lab), mode, shift)


def _cosine(w, ref):
    w = np.atleast_2d(w)
    n = np.linalg.norm(w, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(n > 0, w @ ref / (n * np.linalg.norm(ref)), np.nan)


@dataclass
class LearningCurve:
    steps: np.ndarray
    accuracy: np.ndarray
    alignment: np.ndarray
    accuracy_std: np.ndarray | None = None
    alignment_std: np.ndarray | None = None

    def columns(self, prefix: str = "") -> dict:
        cols = {"step": self.steps, prefix + "accuracy": self.accuracy, prefix + "alignment": self.alignment}
        if self.accuracy_std is not None:
            cols[prefix + "accuracy_std"] = self.accuracy_std
            cols[prefix + "alignment_std"] = self.alignment_std
        return cols

    def to_csv(self, path) -> None:
        write_columns(path, self.columns())


def theory_curve(fit: GaussianFit, lam: float = 1.0, eta: float = 1e-3, steps: int = 12665,
                 dt: float = 0.01, record_every: int = 10, w0=None) -> LearningCurve:
    """Mean flow of the SL rule on the fitted Gaussians, in units of SGD steps.

    Accuracy integrates each fitted Gaussian over the half-space picked out by
    ``w(t)``; alignment is the cosine between ``w(t)`` and the digit-'1' mean.
    """
    task = fit.task()
    w0 = np.zeros(fit.dim) if w0 is None else np.asarray(w0, dtype=float)
    cfg = FlowConfig(dt=dt, t_max=eta * steps, record_every=record_every)
    traj = integrate_mean_flow(task, RuleConfig("sl", lam), w0, cfg, reference=fit.mu1)
    return LearningCurve(traj.t / eta, traj.accuracy, _cosine(traj.mean, fit.mu1))


def classification_rate(weights, x, y) -> np.ndarray:
    """Fraction classified correctly by ``sign(w . x)``; ties count one half."""
    scores = np.atleast_2d(weights) @ x.T
    correct = np.where(scores == 0, 0.5, (np.sign(scores) == y).astype(float))
    return correct.mean(axis=1)


def empirical_curve(data: Dataset, lam: float = 1.0, eta: float = 1e-3, steps: int | None = None,
                    repeats: int = 10, seed: int = 0, checkpoints: int = 200,
                    reference=None) -> LearningCurve:
    """Online SGD with a logistic output over shuffled training data.

    Repeats run side by side with their own shuffles; ``steps`` defaults to one
    epoch. Test accuracy is measured at ``checkpoints`` evenly spaced steps.
    """
    x, y = data.train_x, data.train_y
    n, dim = x.shape
    steps = n if steps is None else steps
    ref = x[y > 0].mean(axis=0) if reference is None else np.asarray(reference, dtype=float)
    rngs = [np.random.default_rng([seed, r]) for r in range(repeats)]
    order = np.empty((repeats, steps), dtype=np.int64)
    for r, rng in enumerate(rngs):
        epochs = -(-steps // n)
        order[r] = np.concatenate([rng.permutation(n) for _ in range(epochs)])[:steps]
    target = 0.5 * (y + 1.0)
    marks = set(np.unique(np.linspace(0, steps, checkpoints + 1).round().astype(int)).tolist())
    w = np.zeros((repeats, dim))
    rec_steps, acc, align = [], [], []

    def record(step):
        rec_steps.append(step)
        acc.append(classification_rate(w, data.test_x, data.test_y))
        align.append(_cosine(w, ref))

    record(0)
    for step in range(1, steps + 1):
        idx = order[:, step - 1]
        xb = x[idx]
        z = np.einsum("ri,ri->r", w, xb)
        w += eta * ((target[idx] - logistic(z))[:, None] * xb - lam * w)
        if step in marks:
            record(step)
    acc, align = np.array(acc), np.array(align)
    with warnings.catch_warnings():
        # alignment is undefined (nan) for every repeat while w = 0
        warnings.simplefilter("ignore", RuntimeWarning)
        align_mean, align_std = np.nanmean(align, axis=1), np.nanstd(align, axis=1)
    return LearningCurve(np.array(rec_steps), acc.mean(axis=1), align_mean, acc.std(axis=1), align_std)


def segment_trends(steps, values, edges, tol: float = 1e-3) -> np.ndarray:
    """Sign (+1, -1 or 0) of the change of ``values`` across each segment.

    ``edges`` are segment boundaries in step units; changes smaller than
    ``tol`` count as flat.
    """
    v = np.interp(edges, steps, values)
    d = np.diff(v)
    return np.where(np.abs(d) <= tol, 0, np.sign(d)).astype(int)


def trend_agreement(theory: LearningCurve, empirical: LearningCurve, edges, repeats: int,
                    z: float = 3.0) -> np.ndarray:
    """Per-segment agreement of the alignment trends.

    Where the theoretical change across a segment is larger than ``z`` standard
    errors of the empirical change, the empirical change must have the same
    sign. Elsewhere the empirical change must stay within ``z`` standard errors
    of the theoretical one.
    """
    th = np.interp(edges, theory.steps, theory.alignment)
    em = np.interp(edges, empirical.steps, empirical.alignment)
    sd = np.interp(edges, empirical.steps, empirical.alignment_std)
    d_th, d_em = np.diff(th), np.diff(em)
    se = np.sqrt(sd[:-1] ** 2 + sd[1:] ** 2) / np.sqrt(repeats)
    resolved = np.abs(d_th) > z * se
    return np.where(resolved, np.sign(d_em) == np.sign(d_th), np.abs(d_em - d_th) <= z * se)
