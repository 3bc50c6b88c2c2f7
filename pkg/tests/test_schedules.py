"""Schedule construction, forward process, and reverse step against independent oracles."""

import numpy as np
import pytest

from b3d.errors import ParameterError, RangeError, ShapeError
from b3d.schedules import (
    build_schedule,
    forward_noise,
    reverse_step,
    reverse_timesteps,
    schedule_from_config,
    schedule_to_config,
)


def brute_force_alpha_bars(betas):
    """Independent oracle: plain sequential product loop."""
    out = [1.0]
    acc = 1.0
    for b in betas:
        acc = acc * (1.0 - b)
        out.append(acc)
    return np.array(out)


def test_single_step_schedule_is_one_minus_beta():
    sched = build_schedule("linear", 0.3, 0.5, 1)
    assert sched.betas.shape == (1,)
    assert sched.betas[0] == 0.3
    assert np.array_equal(sched.alpha_bars, [1.0, 0.7])


@pytest.mark.parametrize("kind", ["linear", "scaled-linear"])
@pytest.mark.parametrize("n_steps", [1, 10, 1000])
def test_alpha_bars_match_brute_force_product(kind, n_steps):
    sched = build_schedule(kind, 1e-4, 0.02, n_steps)
    oracle = brute_force_alpha_bars(sched.betas)
    rel = np.abs(sched.alpha_bars - oracle) / np.abs(oracle)
    assert rel.max() <= 1e-12


def test_scaled_linear_endpoints_exact():
    sched = build_schedule("scaled-linear", 1e-4, 0.02, 1000)
    assert sched.beta(1) == 1e-4
    assert sched.beta(1000) == 0.02


def test_linear_endpoints_exact():
    sched = build_schedule("linear", 1e-4, 0.02, 1000)
    assert sched.beta(1) == 1e-4
    assert sched.beta(1000) == 0.02


@pytest.mark.parametrize("kind", ["linear", "scaled-linear"])
def test_alpha_bars_strictly_decreasing_in_unit_interval(kind):
    sched = build_schedule(kind, 1e-4, 0.02, 1000)
    assert sched.alpha_bars[0] == 1.0
    assert np.all(np.diff(sched.alpha_bars) < 0)
    assert np.all(sched.alpha_bars > 0)
    assert np.all(sched.alpha_bars <= 1.0)
    assert 0.0 < sched.alpha_bars[-1] < 1.0
    assert np.all(sched.betas > 0) and np.all(sched.betas < 1)


@pytest.mark.parametrize(
    "kwargs, fragment",
    [
        (dict(kind="cosine"), "kind"),
        (dict(beta_start=0.0), "beta_start"),
        (dict(beta_start=-0.1), "beta_start"),
        (dict(beta_end=1.0), "beta_end"),
        (dict(beta_start=0.5, beta_end=0.2), "beta_start"),
        (dict(n_steps=0), "n_steps"),
    ],
)
def test_build_schedule_rejects_bad_parameters_naming_field(kwargs, fragment):
    args = dict(kind="linear", beta_start=1e-4, beta_end=0.02, n_steps=10)
    args.update(kwargs)
    with pytest.raises(ParameterError, match=fragment):
        build_schedule(**args)


def test_schedule_arrays_immutable():
    sched = build_schedule("linear", 1e-4, 0.02, 10)
    with pytest.raises(ValueError):
        sched.betas[0] = 0.5
    with pytest.raises(ValueError):
        sched.alpha_bars[0] = 0.5


# --- forward process ---------------------------------------------------------


def test_forward_noise_identity_at_t0():
    sched = build_schedule()
    rng = np.random.default_rng(0)
    x0 = rng.normal(size=16)
    eps = rng.normal(size=16)
    assert np.array_equal(forward_noise(x0, 0, eps, sched), x0)


def test_forward_noise_zero_signal():
    sched = build_schedule()
    rng = np.random.default_rng(1)
    eps = rng.normal(size=16)
    t = 400
    out = forward_noise(np.zeros(16), t, eps, sched)
    assert np.allclose(out, np.sqrt(1.0 - sched.alpha_bar(t)) * eps, rtol=0, atol=0)


def test_forward_noise_monte_carlo_moments():
    """Sample mean within 3 sigma of sqrt(abar)*x0, sample variance within 5% of 1-abar."""
    sched = build_schedule()
    rng = np.random.default_rng(2024)
    dims, n = 16, 10_000
    x0 = rng.uniform(0, 1, size=dims)
    for t in (1, 500, 1000):
        eps = rng.standard_normal((n, dims))
        xt = forward_noise(np.broadcast_to(x0, (n, dims)), t, eps, sched)
        abar = sched.alpha_bar(t)
        target_mean = np.sqrt(abar) * x0
        target_var = 1.0 - abar
        sigma = np.sqrt(target_var / n)
        assert np.all(np.abs(xt.mean(axis=0) - target_mean) <= 3.0 * sigma), f"mean off at t={t}"
        sample_var = xt.var(axis=0, ddof=1)
        assert np.all(np.abs(sample_var - target_var) <= 0.05 * target_var), f"var off at t={t}"


def test_forward_noise_linear_in_inputs():
    sched = build_schedule()
    rng = np.random.default_rng(3)
    x0 = rng.normal(size=12)
    eps = rng.normal(size=12)
    for a in (-2.5, 0.0, 0.7):
        lhs = forward_noise(a * x0, 700, a * eps, sched)
        rhs = a * forward_noise(x0, 700, eps, sched)
        assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-15)


def test_forward_noise_range_and_shape_errors():
    sched = build_schedule(n_steps=100)
    with pytest.raises(RangeError):
        forward_noise(np.zeros(4), 101, np.zeros(4), sched)
    with pytest.raises(RangeError):
        forward_noise(np.zeros(4), -1, np.zeros(4), sched)
    with pytest.raises(ShapeError):
        forward_noise(np.zeros(4), 50, np.zeros(5), sched)


# --- reverse step ------------------------------------------------------------


def oracle_posterior_mean(x_t, eps_hat, t, sched):
    """Independent closed-form oracle in the x0-prediction parameterization."""
    abar_t = sched.alpha_bar(t)
    abar_prev = sched.alpha_bar(t - 1)
    beta = sched.beta(t)
    alpha = 1.0 - beta
    x0_pred = (x_t - np.sqrt(1.0 - abar_t) * eps_hat) / np.sqrt(abar_t)
    coef_x0 = np.sqrt(abar_prev) * beta / (1.0 - abar_t)
    coef_xt = np.sqrt(alpha) * (1.0 - abar_prev) / (1.0 - abar_t)
    return coef_x0 * x0_pred + coef_xt * x_t


@pytest.mark.parametrize("t", [1, 2, 50, 500, 1000])
def test_reverse_step_mean_matches_closed_form_posterior(t):
    sched = build_schedule()
    rng = np.random.default_rng(100 + t)
    x0 = rng.uniform(0, 1, size=16)
    eps = rng.standard_normal(16)
    x_t = forward_noise(x0, t, eps, sched)

    out = reverse_step(x_t, eps, t, sched, np.random.default_rng(7))
    if t > 1:
        z = np.random.default_rng(7).standard_normal(16)
        mean_impl = out - np.sqrt(sched.beta(t)) * z
    else:
        mean_impl = out
    assert np.allclose(mean_impl, oracle_posterior_mean(x_t, eps, t, sched), rtol=0, atol=1e-10)


def test_reverse_step_round_trip_recovers_x0():
    """Oracle noise predictor iterated t -> 0 recovers x0 (1e-3 RMS at 16 dims)."""
    sched = build_schedule()
    rng = np.random.default_rng(11)
    x0 = rng.uniform(0, 1, size=16)
    t0 = 600
    x = forward_noise(x0, t0, rng.standard_normal(16), sched)
    step_rng = np.random.default_rng(12)
    for t in range(t0, 0, -1):
        abar = sched.alpha_bar(t)
        eps_hat = (x - np.sqrt(abar) * x0) / np.sqrt(1.0 - abar)
        x = reverse_step(x, eps_hat, t, sched, step_rng)
    rms = np.sqrt(np.mean((x - x0) ** 2))
    assert rms <= 1e-3


def test_reverse_step_deterministic_at_t1():
    sched = build_schedule()
    rng = np.random.default_rng(13)
    x1 = rng.normal(size=8)
    eps_hat = rng.normal(size=8)
    a = reverse_step(x1, eps_hat, 1, sched, np.random.default_rng(1))
    b = reverse_step(x1, eps_hat, 1, sched, np.random.default_rng(999))
    assert np.array_equal(a, b)


def test_reverse_step_rejects_t0_and_bad_shapes():
    sched = build_schedule(n_steps=10)
    rng = np.random.default_rng(0)
    with pytest.raises(RangeError):
        reverse_step(np.zeros(4), np.zeros(4), 0, sched, rng)
    with pytest.raises(RangeError):
        reverse_step(np.zeros(4), np.zeros(4), 11, sched, rng)
    with pytest.raises(ShapeError):
        reverse_step(np.zeros(4), np.zeros(3), 5, sched, rng)


def test_reverse_timesteps_strided_subsequence():
    ts = reverse_timesteps(1000, 10)
    assert ts[0] == 1000 and ts[-1] == 1
    assert np.all(np.diff(ts) < 0)
    assert len(ts) == 10
    assert np.array_equal(reverse_timesteps(50, 50), np.arange(50, 0, -1))
    with pytest.raises(RangeError):
        reverse_timesteps(100, 101)


# --- config serialization ----------------------------------------------------


def test_schedule_config_round_trip_exact_keys():
    sched = build_schedule("scaled-linear", 1e-4, 0.02, 1000)
    doc = schedule_to_config(sched)
    assert set(doc) == {
        "schedule.kind",
        "schedule.beta_start",
        "schedule.beta_end",
        "schedule.n_steps",
    }
    back = schedule_from_config(doc)
    assert back.kind == sched.kind
    assert back.n_steps == sched.n_steps
    assert np.array_equal(back.betas, sched.betas)
    assert np.array_equal(back.alpha_bars, sched.alpha_bars)
