import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from mdcnet.errors import BoundsError, ConfigError
from mdcnet.schedule import (
    SCHEDULE_KINDS,
    make_schedule,
    posterior_mean,
    posterior_step,
    predict_x0,
    q_sample,
)


@pytest.mark.parametrize("kind", SCHEDULE_KINDS)
@pytest.mark.parametrize("T", [1, 2, 10, 100, 1000])
def test_invariants(kind, T):
    s = make_schedule(kind, T)
    assert s.betas.shape == (T,)
    assert np.all((s.betas > 0) & (s.betas < 1))
    assert np.all((s.alpha_bars > 0) & (s.alpha_bars < 1))
    assert np.all(np.diff(s.alpha_bars) < 0)
    np.testing.assert_allclose(s.alpha_bars, np.cumprod(1 - s.betas), rtol=1e-12)


def test_linear_endpoints():
    s = make_schedule("linear", 1000)
    assert s.betas[0] == pytest.approx(1e-4)
    assert s.betas[999] == pytest.approx(0.02)


def test_cosine_endpoints_match_formula():
    s = make_schedule("cosine", 1000)
    f = lambda u: math.cos((u + 0.008) / 1.008 * math.pi / 2) ** 2  # noqa: E731
    assert s.alpha_bars[0] > 0.99
    assert s.alpha_bars[999] < 0.01
    assert s.alpha_bars[0] == pytest.approx(f(1 / 1000) / f(0), rel=1e-12)
    assert s.alpha_bars[499] == pytest.approx(f(500 / 1000) / f(0), rel=1e-9)


def test_sqrt_formula_before_clip():
    s = make_schedule("sqrt", 1000)
    g = lambda u: 1 - math.sqrt(u + 1e-4)  # noqa: E731
    assert s.alpha_bars[10] == pytest.approx(g(11 / 1000) / g(0), rel=1e-9)


def test_tables_read_only():
    s = make_schedule("linear", 10)
    with pytest.raises(ValueError):
        s.betas[0] = 0.5


def test_errors():
    with pytest.raises(ConfigError):
        make_schedule("quadratic", 10)
    with pytest.raises(BoundsError):
        make_schedule("linear", 0)
    s = make_schedule("linear", 10)
    with pytest.raises(BoundsError):
        q_sample(s, np.zeros(3), 10, np.zeros(3))
    with pytest.raises(BoundsError):
        posterior_step(s, np.zeros(3), np.zeros(3), -1)


def test_q_sample_zero_noise_and_pure_noise_limit(rng):
    s = make_schedule("cosine", 1000)
    x0, eps = rng.normal(size=20), rng.normal(size=20)
    np.testing.assert_allclose(q_sample(s, x0, 300, np.zeros(20)), math.sqrt(s.alpha_bars[300]) * x0)
    assert np.abs(q_sample(s, x0, 999, eps) - eps).max() < 1e-3


def test_q_sample_accepts_torch():
    s = make_schedule("linear", 10)
    out = q_sample(s, torch.ones(4, dtype=torch.float64), 3, torch.zeros(4, dtype=torch.float64))
    assert torch.allclose(out, torch.full((4,), math.sqrt(s.alpha_bars[3]), dtype=torch.float64))


@pytest.mark.parametrize("kind", ["cosine", "linear"])
def test_forward_marginal_monte_carlo(kind):
    s = make_schedule(kind, 1000)
    r = np.random.default_rng(7)
    x0 = 1.5
    for t in (1, 500, 999):
        draws = q_sample(s, np.full(100_000, x0), t, r.normal(size=100_000))
        mean, std = math.sqrt(s.alpha_bars[t]) * x0, math.sqrt(1 - s.alpha_bars[t])
        scale = math.hypot(mean, std)
        assert abs(draws.mean() - mean) <= 0.02 * scale
        assert abs(draws.std() - std) <= 0.02 * std


@settings(max_examples=25, deadline=None)
@given(a=st.floats(-3, 3), b=st.floats(-3, 3), t=st.integers(0, 99), seed=st.integers(0, 999))
def test_q_sample_superposition(a, b, t, seed):
    s = make_schedule("cosine", 100)
    r = np.random.default_rng(seed)
    x1, x2, e1, e2 = r.normal(size=(4, 6))
    lhs = q_sample(s, a * x1 + b * x2, t, a * e1 + b * e2)
    rhs = a * q_sample(s, x1, t, e1) + b * q_sample(s, x2, t, e2)
    assert np.abs(lhs - rhs).max() < 1e-10


def test_posterior_t0_with_exact_noise_recovers_x0(rng):
    s = make_schedule("cosine", 100)
    x0, eps = rng.normal(size=(5, 7)), rng.normal(size=(5, 7))
    x_t = q_sample(s, x0, 0, eps)
    assert np.abs(posterior_step(s, x_t, eps, 0, rng.normal(size=x0.shape)) - x0).max() < 1e-6


def test_posterior_zero_noise_is_mean(rng):
    s = make_schedule("linear", 50)
    x, e = rng.normal(size=(2, 4))
    np.testing.assert_array_equal(posterior_step(s, x, e, 20, np.zeros(4)), posterior_mean(s, x, e, 20))
    np.testing.assert_array_equal(posterior_step(s, x, e, 20), posterior_mean(s, x, e, 20))


def test_posterior_variance_formula():
    s = make_schedule("linear", 100)
    assert s.posterior_variance(0) == 0.0
    t = 40
    expected = s.betas[t] * (1 - s.alpha_bars[t - 1]) / (1 - s.alpha_bars[t])
    assert s.posterior_variance(t) == pytest.approx(expected)


def test_posterior_mean_matches_x0_parameterization(rng):
    # oracle: the Gaussian posterior mean written with x0 and x_t coefficients
    s = make_schedule("cosine", 100)
    x0, eps = rng.normal(size=(2, 8))
    t = 37
    x_t = q_sample(s, x0, t, eps)
    ab, abp, beta = s.alpha_bars[t], s.alpha_bars[t - 1], s.betas[t]
    mu = (math.sqrt(abp) * beta / (1 - ab)) * x0 + (math.sqrt(1 - beta) * (1 - abp) / (1 - ab)) * x_t
    np.testing.assert_allclose(posterior_mean(s, x_t, eps, t), mu, rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(predict_x0(s, x_t, eps, t), x0, atol=1e-9)


@pytest.mark.parametrize("kind", SCHEDULE_KINDS)
def test_oracle_reverse_chain_recovers_x0(kind):
    s = make_schedule(kind, 100)
    r = np.random.default_rng(3)
    x0 = r.normal(size=(10, 6))
    x = r.normal(size=x0.shape)
    for t in reversed(range(s.T)):
        eps = (x - math.sqrt(s.alpha_bars[t]) * x0) / math.sqrt(1 - s.alpha_bars[t])
        x = posterior_step(s, x, eps, t, r.normal(size=x0.shape))
    assert np.linalg.norm(x - x0) / np.linalg.norm(x0) < 1e-3
