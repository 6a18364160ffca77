import math

import numpy as np
import pytest

from perceptron_flow.drift import RuleConfig
from perceptron_flow.experiments import (ForgettingResult, NotReached, SweepResult,
                                         anisotropy_sweep, covariance_decay, crossing_time,
                                         decay_rate, fit_exponential, fixed_point_sweep,
                                         forgetting_flow, forgetting_run, noise_sweep, task_means,
                                         tilted_start, time_to_alignment)
from perceptron_flow.flow import FlowConfig, WeightState, integrate_cov_flow
from perceptron_flow.task import IsotropicTaskParams, TaskSpec


def test_crossing_time_interpolates():
    t = [0.0, 1.0, 2.0, 3.0]
    assert crossing_time(t, [0.1, 0.3, 0.7, 0.9], 0.5) == pytest.approx(1.5)
    assert crossing_time(t, [0.6, 0.7, 0.8, 0.9], 0.6) == 0.0
    assert math.isnan(crossing_time(t, [0.1, 0.2, 0.3, 0.4], 0.5))


def test_tilted_start_geometry():
    for dim in (2, 5, 50):
        mu = np.random.default_rng(dim).standard_normal(dim)
        w = tilted_start(mu)
        assert np.linalg.norm(w) == pytest.approx(0.5)
        assert w @ mu / (np.linalg.norm(w) * np.linalg.norm(mu)) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        tilted_start([1.0])


def test_threshold_at_initial_alignment_gives_zero():
    params = IsotropicTaskParams(np.array([1.0, 0.0]), 1.0)
    assert time_to_alignment(params, RuleConfig("sl"), threshold=0.5) == 0.0


def test_crossing_insensitive_to_recording_interval():
    params = IsotropicTaskParams(np.array([1.0, 0.0]), 0.5)
    for rule in ("sl", "rl"):
        a = time_to_alignment(params, RuleConfig(rule), record_every=20)
        b = time_to_alignment(params, RuleConfig(rule), record_every=10)
        assert abs(a - b) < 1e-3


def test_not_reached():
    params = IsotropicTaskParams(np.array([1.0, 0.0]), 1.0)
    with pytest.raises(NotReached):
        time_to_alignment(params, RuleConfig("sl"), t_max=0.05)


def test_sweep_result_validation(tmp_path):
    with pytest.raises(ValueError):
        SweepResult("sigma", [0.5, 0.5], [1.0, 2.0], "sl")
    res = SweepResult("sigma", [0.5, 1.0], [1.0, math.nan], "sl")
    assert res.status == ["ok", "not-reached"]
    res.to_csv(tmp_path / "s.csv")
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "sigma,time"


def test_zero_anisotropy_is_the_isotropic_point():
    for rule in ("sl", "rl"):
        iso = noise_sweep(RuleConfig(rule), sigmas=(1.0,))
        aniso = anisotropy_sweep(RuleConfig(rule), epsilons=(0.0,))
        assert aniso.outcome[0] == iso.outcome[0]
    with pytest.raises(ValueError):
        anisotropy_sweep(RuleConfig("sl"), epsilons=(-1.0, 0.0))


def test_sweeps_are_deterministic():
    a = noise_sweep(RuleConfig("rl"), sigmas=(0.5, 1.0))
    b = noise_sweep(RuleConfig("rl"), sigmas=(0.5, 1.0))
    assert np.array_equal(a.outcome, b.outcome)


def test_fit_exponential_recovers_rate():
    x = np.arange(8.0)
    fit = fit_exponential(x, 3.0 * np.exp(-0.7 * x))
    assert fit.rate == pytest.approx(0.7, abs=1e-12)
    assert fit.log_amplitude == pytest.approx(math.log(3.0), abs=1e-12)
    assert fit.r2 == pytest.approx(1.0)
    rng = np.random.default_rng(0)
    noisy = fit_exponential(x, 3.0 * np.exp(-0.7 * x + 0.05 * rng.standard_normal(8)))
    lo, hi = noisy.ci
    assert lo < noisy.rate < hi
    with pytest.raises(ValueError):
        fit_exponential([0.0, 1.0], [1.0, -1.0])


def test_decay_rate_without_drift_is_twice_lambda():
    z = np.zeros(3)
    task = TaskSpec(z, z, np.zeros((3, 3)), np.zeros((3, 3)))
    lam = 0.1
    traj = integrate_cov_flow(task, RuleConfig("sl", lam), WeightState(np.ones(3), 0.01 * np.eye(3)),
                              FlowConfig(t_max=20, record_every=1))
    assert decay_rate(traj.t, traj.tr_cov) == pytest.approx(2 * lam, abs=1e-4)


def test_decay_rate_stops_at_underflow():
    t = np.arange(10.0)
    vals = np.exp(-t)
    vals[7:] = 0.0
    assert decay_rate(t, vals, tail=1.0) == pytest.approx(1.0)


def test_trace_covariance_never_grows():
    for rule in ("sl", "rl"):
        res = covariance_decay(RuleConfig(rule, 0.1), sigmas=(0.0, 1.0), dim=4, t_max=5)
        for traj in res.trajectories:
            assert np.all(np.diff(traj.tr_cov) <= 1e-15)
    with pytest.raises(ValueError):
        covariance_decay(RuleConfig("sl", 0.0))


def test_fixed_point_sweep_flags_divergence():
    res = fixed_point_sweep(RuleConfig("sl"), [0.0, 0.1], sigma=0.0)
    assert res.status == ["diverged", "ok"]
    assert math.isinf(res.outcome[0]) and np.isfinite(res.outcome[1])


def test_task_means():
    rng = np.random.default_rng(0)
    m = task_means(5, 20, rng)
    assert np.allclose(m @ m.T, np.eye(5), atol=1e-12)
    r = task_means(5, 20, rng, "random")
    assert np.allclose(np.linalg.norm(r, axis=1), 1.0)
    with pytest.raises(ValueError):
        task_means(30, 20, rng)


def test_forgetting_fit_window():
    res = ForgettingResult("sl", 0.1, np.array([0.8, 0.4, 0.2, 0.01, 0.05]),
                           np.full(5, 0.02), np.ones(5), np.eye(5))
    fit = res.fit()
    assert fit.points == 3 and fit.rate == pytest.approx(math.log(2))
    flat = ForgettingResult("sl", 1.0, np.array([0.8, 0.01, 0.02]), np.full(3, 0.02), np.ones(3), np.eye(3))
    with pytest.raises(ValueError):
        flat.fit()


@pytest.mark.parametrize("rule", ["sl", "rl"])
def test_forgetting_run_small(rule):
    kw = dict(num_tasks=4, sigma=0.1, lam=10.0, dim=40, runs=8, seed=2)
    res = forgetting_run(rule, **kw)
    assert res.curve[0] >= 0.8
    assert np.all(np.abs(res.curve) <= 1)
    assert np.all(np.diff(res.curve) < 0)
    again = forgetting_run(rule, **kw)
    assert np.array_equal(res.curve, again.curve)
    with pytest.raises(NotReached):
        forgetting_run(rule, num_tasks=2, dim=40, runs=4, max_steps=2)
    with pytest.raises(ValueError):
        forgetting_run(rule, num_tasks=1)


def test_forgetting_flow_small():
    res = forgetting_flow("sl", num_tasks=4, dim=40, inits=3, dt=1e-3)
    assert res.curve[0] >= 0.8 - 1e-12
    assert np.all(np.diff(res.curve) < 0)
    assert res.fit().rate > 0
