"""DPM-Solver++ sampler against closed-form Gaussian diffusion oracles."""

import numpy as np
import pytest

from matedit.diffusion import (make_schedule, sample_latents, solver_timesteps)

MU, SIGMA = 0.3, 0.2


def _analytic_eps_fn(schedule, mu=MU, sigma=SIGMA):
    """Exact posterior noise prediction for z0 ~ N(mu, sigma^2)."""

    def eps_fn(z, t):
        a = schedule.alpha(t)
        s = schedule.sigma(t)
        x0_post = (a * sigma**2 * z + s**2 * mu) / (a**2 * sigma**2 + s**2)
        return (z - a * x0_post) / s

    return eps_fn


def _ancestral_reference(schedule, eps_fn, z, seed):
    """1000-step DDPM ancestral chain, the long-chain oracle."""
    rng = np.random.default_rng(seed)
    x = z.copy()
    for t in range(schedule.T - 1, -1, -1):
        beta = schedule.betas[t]
        ab = schedule.alpha_bars[t]
        ab_prev = schedule.alpha_bars[t - 1] if t > 0 else 1.0
        e = eps_fn(x, t)
        x = (x - beta / np.sqrt(1 - ab) * e) / np.sqrt(1 - beta)
        if t > 0:
            var = beta * (1 - ab_prev) / (1 - ab)
            x += np.sqrt(var) * rng.standard_normal(x.shape)
    return x


def test_gaussian_toy_matches_target_statistics():
    schedule = make_schedule()
    eps_fn = _analytic_eps_fn(schedule)
    z = np.random.default_rng(42).standard_normal(10_000)
    out = sample_latents(eps_fn, schedule, z, steps=20)
    assert abs(out.mean() - MU) < 0.02
    assert abs(out.std() - SIGMA) / SIGMA < 0.03


def test_20_step_matches_1000_step_reference():
    schedule = make_schedule()
    eps_fn = _analytic_eps_fn(schedule)
    z = np.random.default_rng(42).standard_normal(10_000)
    fast = sample_latents(eps_fn, schedule, z, steps=20)
    ref = _ancestral_reference(schedule, eps_fn, z, seed=1)
    assert abs(fast.mean() - ref.mean()) / abs(ref.mean()) < 0.05
    assert abs(fast.std() - ref.std()) / ref.std() < 0.05


def test_sampler_is_deterministic():
    schedule = make_schedule()
    eps_fn = _analytic_eps_fn(schedule)
    z = np.random.default_rng(7).standard_normal(256)
    a = sample_latents(eps_fn, schedule, z, steps=20)
    b = sample_latents(eps_fn, schedule, z, steps=20)
    assert np.array_equal(a, b)


def test_solver_timesteps_cover_schedule():
    schedule = make_schedule()
    ts = solver_timesteps(schedule, 20)
    assert ts[0] == schedule.T - 1
    assert ts[-1] == 0
    assert np.all(np.diff(ts) < 0)
    assert len(ts) == 21
    with pytest.raises(ValueError):
        solver_timesteps(schedule, 0)


def test_sampler_rejects_non_finite_model():
    schedule = make_schedule()

    def bad(z, t):
        return np.full_like(z, np.nan)

    with pytest.raises(FloatingPointError):
        sample_latents(bad, schedule, np.zeros(4), steps=5)


def test_x0_clip_bounds_output():
    schedule = make_schedule()
    eps_fn = _analytic_eps_fn(schedule, mu=0.0, sigma=5.0)  # wide data
    z = np.random.default_rng(3).standard_normal(1000)
    out = sample_latents(eps_fn, schedule, z, steps=20, x0_clip=(-1, 1))
    assert out.min() >= -1.0 and out.max() <= 1.0
