import numpy as np
import pytest

from tric.core.numcore import ShapeMismatchError
from tric.core.schedule import (GuidanceConfig, cfg_combine, cosine_schedule, ddpm_step, p_sample_loop,
                                posterior_coefficients, q_sample)


def test_cosine_schedule_shape_and_monotonicity():
    schedule = cosine_schedule(50)
    assert len(schedule) == 50
    assert schedule.alpha_bar.shape == (51,)
    assert schedule.alpha_bar[0] == 1.0
    assert np.all(np.diff(schedule.alpha_bar) < 0)
    assert schedule.alpha_bar[-1] < 0.01
    assert np.all(schedule.beta[1:] >= 1e-8) and np.all(schedule.beta[1:] <= 0.999)
    np.testing.assert_allclose(schedule.alpha_bar, np.cumprod(1.0 - schedule.beta))


def test_cosine_schedule_rejects_zero_steps():
    with pytest.raises(ValueError):
        cosine_schedule(0)


def test_q_sample_endpoints_and_per_item_steps(rng):
    schedule = cosine_schedule(10)
    x0 = rng.standard_normal((3, 4, 2))
    eps = rng.standard_normal(x0.shape)
    np.testing.assert_array_equal(q_sample(schedule, x0, 0, eps), x0)
    t = np.array([1, 5, 10])
    out = q_sample(schedule, x0, t, eps)
    for i, step in enumerate(t):
        expected = np.sqrt(schedule.alpha_bar[step]) * x0[i] + np.sqrt(1 - schedule.alpha_bar[step]) * eps[i]
        np.testing.assert_allclose(out[i], expected)
    with pytest.raises(ValueError):
        q_sample(schedule, x0, 11, eps)
    with pytest.raises(ShapeMismatchError):
        q_sample(schedule, x0, 3, eps[:2])


def test_q_sample_variance_matches_schedule():
    schedule = cosine_schedule(50)
    draws = q_sample(schedule, np.zeros(100_000), 30, np.random.default_rng(5).standard_normal(100_000))
    assert abs(np.var(draws) / (1.0 - schedule.alpha_bar[30]) - 1.0) < 0.02


def test_posterior_at_first_step_returns_prediction():
    schedule = cosine_schedule(20)
    coef_x0, coef_xt, variance = posterior_coefficients(schedule, 1)
    assert coef_x0 == pytest.approx(1.0)
    assert coef_xt == pytest.approx(0.0)
    assert variance == pytest.approx(0.0)


def test_ddpm_step_final_step_adds_no_noise(rng):
    schedule = cosine_schedule(20)
    x_t = rng.standard_normal(5)
    x0_hat = rng.standard_normal(5)
    a = ddpm_step(schedule, x_t, x0_hat, 1, rng.standard_normal(5))
    b = ddpm_step(schedule, x_t, x0_hat, 1, np.zeros(5))
    np.testing.assert_array_equal(a, b)
    with pytest.raises(ValueError):
        ddpm_step(schedule, x_t, x0_hat, 0, np.zeros(5))
    with pytest.raises(ValueError):
        ddpm_step(schedule, x_t, x0_hat, 3, np.zeros(5), variance="learned")


def test_beta_variance_is_larger_than_posterior(rng):
    schedule = cosine_schedule(20)
    noise = np.ones(4)
    x = np.zeros(4)
    posterior = ddpm_step(schedule, x, x, 10, noise, variance="posterior")
    beta = ddpm_step(schedule, x, x, 10, noise, variance="beta")
    assert np.all(beta > posterior)


@pytest.mark.parametrize("variance", ["posterior", "beta"])
def test_oracle_denoiser_recovers_signal(variance):
    schedule = cosine_schedule(50)
    x0 = np.sin(np.linspace(0.0, 4.0 * np.pi, 32))
    rng = np.random.default_rng(11)
    out = p_sample_loop(schedule, lambda x, t: x0, rng.standard_normal(x0.shape), rng, variance=variance)
    assert np.mean((out - x0) ** 2) < 0.05


def test_sampling_loop_is_seed_deterministic():
    schedule = cosine_schedule(10)
    x0 = np.linspace(-1.0, 1.0, 6)

    def run(seed):
        rng = np.random.default_rng(seed)
        return p_sample_loop(schedule, lambda x, t: 0.5 * x + x0, rng.standard_normal(6), rng)

    np.testing.assert_array_equal(run(3), run(3))
    assert not np.array_equal(run(3), run(4))


def test_sampling_loop_visits_every_step():
    schedule = cosine_schedule(7)
    visited = []
    p_sample_loop(schedule, lambda x, t: x, np.zeros(2), np.random.default_rng(0),
                  on_step=lambda t, x: visited.append(t))
    assert visited == list(range(7, 0, -1))


def test_cfg_combine(rng):
    cond = rng.standard_normal((2, 3))
    uncond = rng.standard_normal((2, 3))
    assert cfg_combine(cond, uncond, 1.0) is cond
    assert cfg_combine(cond, uncond, 0.0) is uncond
    np.testing.assert_allclose(cfg_combine(cond, uncond, 4.0), uncond + 4.0 * (cond - uncond))
    with pytest.raises(ShapeMismatchError):
        cfg_combine(cond, uncond[:1], 2.0)


def test_guidance_config_rejects_negative_scale():
    assert GuidanceConfig().g == 4.0
    with pytest.raises(ValueError):
        GuidanceConfig(g=-1.0)
