import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gaitdiff.schedule import (DEFAULT_BETA_END, DEFAULT_BETA_START, forward_noise,
                               linear_schedule, sinusoidal_embedding)

from oracles import cumprod_alpha_bar


def test_linear_schedule_endpoints_and_spacing():
    s = linear_schedule(60, 1e-4, 0.02)
    assert s.beta(1) == 1e-4
    assert abs(s.beta(60) - 0.02) < 1e-18
    # (0.02 - 1e-4) / 59
    np.testing.assert_allclose(np.diff(s.betas), 3.3728813559322034e-4, rtol=0, atol=1e-15)


@pytest.mark.parametrize("beta_end", [0.02, DEFAULT_BETA_END])
def test_alpha_bar_matches_scalar_cumprod(beta_end):
    s = linear_schedule(60, 1e-4, beta_end)
    oracle = cumprod_alpha_bar(60, 1e-4, beta_end)
    np.testing.assert_allclose(s.alpha_bars, oracle, rtol=0, atol=1e-12)


def test_schedule_invariants():
    s = linear_schedule()
    assert s.T == 60 and s.beta_start == DEFAULT_BETA_START
    assert np.all((s.betas > 0) & (s.betas < 1))
    assert np.all(np.diff(s.betas) > 0)
    assert np.all(np.diff(s.alpha_bars) < 0)
    assert np.all((s.alpha_bars > 0) & (s.alpha_bars < 1))
    assert s.alpha_bar(0) == 1.0
    # The default prior must be close to the terminal forward marginal.
    assert s.alpha_bar(60) < 0.01


@pytest.mark.parametrize("args", [(0, 1e-4, 0.02), (10, 0.0, 0.02), (10, 0.03, 0.02), (10, 1e-4, 1.0)])
def test_schedule_rejects_bad_ranges(args):
    with pytest.raises(ValueError):
        linear_schedule(*args)


def test_forward_noise_reductions(rng):
    s = linear_schedule()
    a0 = rng.standard_normal(6)
    eps = rng.standard_normal(6)
    ab = s.alpha_bar(30)
    np.testing.assert_allclose(forward_noise(a0, 30, np.zeros(6), s), math.sqrt(ab) * a0)
    np.testing.assert_allclose(forward_noise(np.zeros(6), 30, eps, s), math.sqrt(1 - ab) * eps)
    with pytest.raises(ValueError):
        forward_noise(a0, 0, eps, s)
    with pytest.raises(ValueError):
        forward_noise(a0, 61, eps, s)


def test_forward_noise_per_row_steps(rng):
    s = linear_schedule()
    a0 = rng.standard_normal((4, 6))
    eps = rng.standard_normal((4, 6))
    t = np.array([1, 17, 30, 60])
    out = forward_noise(a0, t, eps, s)
    for i in range(4):
        np.testing.assert_allclose(out[i], forward_noise(a0[i], int(t[i]), eps[i], s), rtol=0, atol=1e-15)


def test_forward_noise_monte_carlo_moments():
    s = linear_schedule()
    r = np.random.default_rng(3)
    a0 = np.array([0.4, -1.2, 0.0, 2.0, -0.3, 0.9])
    n = 100_000
    x = forward_noise(np.broadcast_to(a0, (n, 6)), 30, r.standard_normal((n, 6)), s)
    ab = s.alpha_bar(30)
    sigma = math.sqrt(1 - ab)
    assert np.all(np.abs(x.mean(0) - math.sqrt(ab) * a0) < 3 * sigma / math.sqrt(n))
    assert np.all(np.abs(x.var(0) / (1 - ab) - 1) < 0.02)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 60), st.floats(-3, 3), st.floats(-3, 3))
def test_forward_noise_affine(t, c1, c2):
    s = linear_schedule()
    r = np.random.default_rng(t)
    a, b, e, f = (r.standard_normal(6) for _ in range(4))
    lhs = forward_noise(c1 * a + c2 * b, t, c1 * e + c2 * f, s)
    rhs = c1 * forward_noise(a, t, e, s) + c2 * forward_noise(b, t, f, s)
    np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-12)


def test_embedding_examples():
    e0 = sinusoidal_embedding(0)
    assert e0.shape == (128,)
    assert np.all(e0[:64] == 0) and np.all(e0[64:] == 1)
    assert abs(sinusoidal_embedding(1)[0] - math.sin(1.0)) < 1e-15
    assert abs(sinusoidal_embedding(1)[0] - 0.841471) < 1e-6
    half_1 = sinusoidal_embedding(7)[1]
    assert abs(half_1 - math.sin(7 / 10000 ** (2 / 128))) < 1e-15
    with pytest.raises(ValueError):
        sinusoidal_embedding(3, 127)


def test_embedding_bounded_and_injective():
    emb = sinusoidal_embedding(np.arange(61))
    assert np.all(np.abs(emb) <= 1.0)
    d = np.linalg.norm(emb[:, None, :] - emb[None, :, :], axis=-1)
    assert np.all(d[~np.eye(61, dtype=bool)] > 0)
