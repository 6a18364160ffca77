import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from perceptron_flow.task import IsotropicTaskParams, TaskSpec, clip_psd, model_accuracy, sample

# independent 10^7-draw Monte Carlo: default_rng(12345), fair labels y, x = y + N(0, 1),
# fraction with sign(x) == y; binomial standard error 1.16e-4
MC_ACCURACY_ALIGNED_SIGMA1 = 0.8413267


def random_task(rng, n):
    a = rng.standard_normal((n, n))
    b = rng.standard_normal((n, n))
    return TaskSpec(rng.standard_normal(n), rng.standard_normal(n),
                    a @ a.T / n + 0.1 * np.eye(n), b @ b.T / n + 0.1 * np.eye(n))


def test_rejects_indefinite_covariance():
    bad = np.diag([1.0, -1e-3])
    with pytest.raises(ValueError):
        TaskSpec(np.zeros(2), np.zeros(2), bad, np.eye(2))


def test_clips_tiny_negative_eigenvalues():
    cov = np.diag([1.0, -1e-12])
    out = clip_psd(cov)
    assert np.linalg.eigvalsh(out).min() >= 0.0


def test_singular_covariance_accepted():
    v = np.array([1.0, 2.0, -1.0])
    task = TaskSpec(np.zeros(3), np.zeros(3), np.outer(v, v), np.zeros((3, 3)))
    x, y = sample(task, 0, 1000)
    pos = x[y == 1]
    # all positive samples lie on the line spanned by v, up to the square root of
    # rounding-level eigenvalues
    resid = pos - np.outer(pos @ v / (v @ v), v)
    assert np.abs(resid).max() < 1e-6 * np.abs(pos).max()
    assert np.var(pos @ v / (v @ v)) == pytest.approx(1.0, rel=0.15)


def test_shape_mismatch():
    with pytest.raises(ValueError):
        TaskSpec(np.zeros(2), np.zeros(3), np.eye(2), np.eye(2))


def test_zero_covariance_sampling_gives_mean():
    mu = np.array([0.3, -1.2])
    task = TaskSpec(mu, -mu, np.zeros((2, 2)), np.zeros((2, 2)))
    x, y = sample(task, 1, 50)
    assert np.all(x[y == 1] == mu)
    assert np.all(x[y == -1] == -mu)


def test_sampling_deterministic():
    task = random_task(np.random.default_rng(0), 4)
    x1, y1 = sample(task, 7, 100)
    x2, y2 = sample(task, 7, 100)
    assert np.array_equal(x1, x2) and np.array_equal(y1, y2)
    x3, _ = sample(task, 8, 100)
    assert not np.array_equal(x1, x3)


def test_sampling_law_of_large_numbers():
    task = random_task(np.random.default_rng(1), 3)
    x, y = sample(task, 2, 1_000_000)
    pos = x[y == 1]
    se = np.sqrt(np.diag(task.sigma_pos) / pos.shape[0])
    assert np.all(np.abs(pos.mean(axis=0) - task.mu_pos) < 5 * se)
    # labels are fair coin flips
    assert abs((y == 1).mean() - 0.5) < 5 * 0.5 / math.sqrt(y.size)
    cov = np.cov(pos, rowvar=False)
    assert np.allclose(cov, task.sigma_pos, atol=0.01)


def test_anisotropic_covariance_split():
    for n in (2, 5, 50):
        p = IsotropicTaskParams.standard(n, sigma=1.5, epsilon=0.4)
        cov = p.covariance()
        u = p.mu / np.linalg.norm(p.mu)
        assert u @ cov @ u == pytest.approx(1.5 ** 2 * 1.4)
        assert np.trace(cov) == pytest.approx(n * 1.5 ** 2)
        evals = np.linalg.eigvalsh(cov)
        # orthogonal variance spread equally
        assert np.ptp(np.sort(evals)[: n - 1]) < 1e-12
    cov2 = IsotropicTaskParams.standard(2, 1.0, -0.3).covariance()
    assert np.allclose(np.diag(cov2), [0.7, 1.3])


def test_isotropic_zero_epsilon():
    p = IsotropicTaskParams.standard(4, sigma=0.5)
    task = p.to_task()
    assert np.allclose(task.sigma_pos, 0.25 * np.eye(4))
    assert np.array_equal(task.mu_neg, -task.mu_pos)


def test_json_round_trip(tmp_path):
    task = random_task(np.random.default_rng(3), 3)
    path = tmp_path / "task.json"
    task.save_json(path)
    back = TaskSpec.load_json(path)
    assert np.allclose(back.sigma_pos, task.sigma_pos) and np.array_equal(back.mu_neg, task.mu_neg)


def test_json_shorthand(tmp_path):
    path = tmp_path / "iso.json"
    path.write_text(json.dumps({"dim": 3, "sigma": 2.0, "epsilon": 0.5}))
    task = TaskSpec.load_json(path)
    assert np.allclose(task.sigma_pos, IsotropicTaskParams.standard(3, 2.0, 0.5).covariance())
    with pytest.raises(ValueError):
        TaskSpec.from_dict({"dim": 4, "mu": [1.0, 0.0], "sigma": 1.0})


def test_accuracy_examples():
    mu = np.array([1.0, 0.0, 0.0])
    task = IsotropicTaskParams(mu, 1.0).to_task()
    assert model_accuracy(task, [0.0, 1.0, 0.0]) == pytest.approx(0.5)
    acc = model_accuracy(task, [2.0, 0.0, 0.0])
    assert acc == pytest.approx(0.5 * (1 + math.erf(1 / math.sqrt(2))), abs=1e-15)
    assert abs(acc - MC_ACCURACY_ALIGNED_SIGMA1) < 3 * 1.16e-4


def test_accuracy_zero_weights_and_degenerate_variance():
    mu = np.array([1.0, 0.0])
    task = TaskSpec(mu, -mu, np.zeros((2, 2)), np.zeros((2, 2)))
    assert model_accuracy(task, np.zeros(2)) == 0.5
    assert model_accuracy(task, [1.0, 0.0]) == 1.0
    assert model_accuracy(task, [-1.0, 0.0]) == 0.0
    with pytest.raises(ValueError):
        model_accuracy(task, [0.0, 1.0])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10 ** 6), st.floats(1e-3, 1e3))
def test_accuracy_scale_invariant_and_antisymmetric(seed, scale):
    rng = np.random.default_rng(seed)
    task = random_task(rng, 4)
    w = rng.standard_normal(4)
    assert model_accuracy(task, scale * w) == pytest.approx(model_accuracy(task, w), abs=1e-12)
    sym = IsotropicTaskParams(rng.standard_normal(4), 0.7, 0.2).to_task()
    assert model_accuracy(sym, w) + model_accuracy(sym, -w) == pytest.approx(1.0, abs=1e-12)


def test_accuracy_matches_monte_carlo_classification():
    rng = np.random.default_rng(11)
    for k in range(5):
        task = random_task(rng, 10)
        w = rng.standard_normal(10)
        x, y = sample(task, 100 + k, 1_000_000)
        rate = np.mean(np.sign(x @ w) == y)
        p = model_accuracy(task, w)
        se = math.sqrt(p * (1 - p) / y.size)
        assert abs(rate - p) < 3 * se
