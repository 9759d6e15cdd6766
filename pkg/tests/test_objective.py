import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from cvarsgd.core import Batch, DimensionError, Example, ParamState, ValidationError
from cvarsgd.losses import RidgeLoss, SmoothedSurrogate
from cvarsgd.objective import (
    batch_losses, cvar_sorted, cvar_variational, event_mass, g_alpha_estimate, grad_g_alpha_estimate,
    in_event, smoothed_g_estimate, smoothed_grad_g, smoothing_gap_bound,
)


def grid_oracle(samples, alpha):
    # the variational objective is piecewise linear in t with kinks at the
    # samples, so its minimum over t is attained at one of them
    s = np.asarray(samples, dtype=float)
    return min(t + np.maximum(s - t, 0.0).sum() / (alpha * s.size) for t in s)


def test_cvar_small_example():
    assert cvar_sorted([1, 2, 3, 4], 0.5) == 3.5
    v, t = cvar_variational([1, 2, 3, 4], 0.5)
    assert v == pytest.approx(3.5, abs=1e-12)
    assert 2.0 - 1e-9 <= t <= 3.0 + 1e-9


def test_cvar_alpha_one_is_mean():
    z = [3.0, -1.0, 4.0, 1.5]
    assert cvar_sorted(z, 1.0) == pytest.approx(np.mean(z))
    assert cvar_variational(z, 1.0)[0] == pytest.approx(np.mean(z), abs=1e-9)


def test_cvar_small_alpha_is_max():
    z = np.arange(10.0)
    assert cvar_sorted(z, 1e-6) == 9.0


def test_cvar_fractional_tail():
    # alpha n = 1.5: the worst sample with weight 1 and the next with weight 0.5
    assert cvar_sorted([0, 1, 2, 3], 0.375) == pytest.approx((3 + 0.5 * 2) / 1.5)


def test_cvar_rejects():
    with pytest.raises(ValueError):
        cvar_sorted([], 0.5)
    with pytest.raises(ValidationError):
        cvar_sorted([1.0], 0.0)


def test_variational_t_is_quantile(rng):
    z = rng.normal(size=1001)
    v, t = cvar_variational(z, 0.1)
    # alpha n = 100.1, so the minimizer is the 101st largest sample
    assert t == pytest.approx(np.sort(z)[::-1][100], abs=1e-8)


sample_sets = st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=1, max_size=60)
alphas = st.floats(1e-3, 1.0)


@settings(max_examples=200, deadline=None)
@given(sample_sets, alphas)
def test_cvar_sorted_matches_grid_oracle(z, a):
    assert cvar_sorted(z, a) == pytest.approx(grid_oracle(z, a), rel=1e-9, abs=1e-9)


@settings(max_examples=200, deadline=None)
@given(sample_sets, alphas)
def test_cvar_variational_matches_sorted(z, a):
    v, _ = cvar_variational(z, a)
    s = cvar_sorted(z, a)
    assert abs(v - s) <= 1e-8 * (1 + abs(s))


@settings(max_examples=100, deadline=None)
@given(sample_sets, st.floats(1e-3, 1.0), st.floats(1e-3, 1.0), st.floats(-100, 100))
def test_cvar_properties(z, a, b, c):
    lo, hi = sorted((a, b))
    # decreasing in alpha, between mean and max, translation equivariant
    assert cvar_sorted(z, lo) >= cvar_sorted(z, hi) - 1e-9 * (1 + max(map(abs, z)))
    assert np.mean(z) - 1e-9 * (1 + max(map(abs, z))) <= cvar_sorted(z, a) <= max(z) + 1e-9
    shifted = cvar_sorted(np.asarray(z) + c, a)
    assert shifted == pytest.approx(cvar_sorted(z, a) + c, abs=1e-8 * (1 + max(map(abs, z)) + abs(c)))


def test_g_estimate_by_hand():
    loss = RidgeLoss(0.0 + 1e-12)
    b = Batch(np.array([[1.0], [1.0], [1.0]]), [0.0, 1.0, 3.0])
    st_ = ParamState([0.0], 0.5)
    # losses 0, 1, 9 (up to the tiny ridge term); samples t + (l - t)_+ / alpha
    g = g_alpha_estimate(st_, loss, b, 0.5)
    expect = np.array([0.5, 0.5 + 0.5 / 0.5, 0.5 + 8.5 / 0.5])
    assert g.value == pytest.approx(expect.mean())
    assert g.std_error == pytest.approx(np.std(expect, ddof=1) / math.sqrt(3))
    assert g.n_samples == 3
    assert event_mass(st_, loss, b) == pytest.approx(2 / 3)


def test_event_is_strict():
    loss = RidgeLoss(1e-12)
    e = Example([1.0], 2.0)
    l = loss.value([0.0], e.x, e.y)
    assert not in_event(ParamState([0.0], l), loss, e)
    assert in_event(ParamState([0.0], l - 1e-9), loss, e)


def test_dimension_mismatch(small_pop, ridge):
    with pytest.raises(DimensionError):
        batch_losses(ParamState([0.0, 0.0], 0.0), ridge, small_pop)


def fd_grad(f, z, h):
    g = np.empty_like(z)
    for i in range(z.size):
        e = np.zeros_like(z)
        e[i] = h
        g[i] = (f(z + e) - f(z - e)) / (2 * h)
    return g


def test_grad_g_matches_finite_differences(small_pop, ridge, rng):
    b = small_pop[:300]
    checked = 0
    while checked < 20:
        z = np.append(rng.normal(size=7) * 0.5 + 0.5, rng.uniform(0, 3))
        st_ = ParamState.from_vector(z)
        l = batch_losses(st_, ridge, b)
        if np.min(np.abs(l - st_.t)) < 1e-3:
            continue  # a kink is within reach of the difference stencil
        f = lambda v: g_alpha_estimate(ParamState.from_vector(v), ridge, b, 0.2).value  # noqa: E731
        fd = fd_grad(f, z, 1e-7)
        g = grad_g_alpha_estimate(st_, ridge, b, 0.2)
        assert np.linalg.norm(fd - g) <= 1e-5 * max(1.0, np.linalg.norm(g))
        checked += 1


@pytest.mark.parametrize("sigma", [0.05, 1.0])
def test_smoothed_grad_matches_finite_differences(small_pop, ridge, rng, sigma):
    s = SmoothedSurrogate(ridge, sigma)
    b = small_pop[:300]
    for _ in range(10):
        z = np.append(rng.normal(size=7) * 0.5 + 0.5, rng.uniform(0, 3))
        f = lambda v: smoothed_g_estimate(ParamState.from_vector(v), s, b, 0.2).value  # noqa: E731
        fd = fd_grad(f, z, 1e-6)
        g = smoothed_grad_g(ParamState.from_vector(z), s, b, 0.2)
        assert np.linalg.norm(fd - g) <= 1e-5 * max(1.0, np.linalg.norm(g))


def test_smoothed_matches_quadrature_over_w(small_pop, ridge):
    # integrate w out numerically instead of through the closed form
    sigma = 0.7
    s = SmoothedSurrogate(ridge, sigma)
    b = small_pop[:100]
    st_ = ParamState(np.full(7, 0.4), 1.0)
    l = batch_losses(st_, ridge, b)
    dens = lambda w: math.exp(-0.5 * (w / sigma) ** 2) / (sigma * math.sqrt(2 * math.pi))  # noqa: E731
    vals = []
    for li in l:
        z = li - st_.t
        hi = min(z, 40 * sigma)
        e = integrate.quad(lambda w: (z - w) * dens(w), -40 * sigma, hi, epsabs=1e-13, limit=200)[0] \
            if hi > -40 * sigma else 0.0
        vals.append(st_.t + e / 0.2)
    assert smoothed_g_estimate(st_, s, b, 0.2).value == pytest.approx(np.mean(vals), rel=1e-9)


@pytest.mark.parametrize("sigma", [0.1, 1.0])
def test_smoothing_sandwich(small_pop, ridge, rng, sigma):
    s = SmoothedSurrogate(ridge, sigma)
    b = small_pop[:500]
    for _ in range(100):
        st_ = ParamState(rng.normal(size=7), rng.normal() * 5)
        g = g_alpha_estimate(st_, ridge, b, 0.2).value
        sg = smoothed_g_estimate(st_, s, b, 0.2).value
        assert g <= sg <= g + smoothing_gap_bound(sigma, 0.2)


def test_smoothed_gradient_tends_to_plain(small_pop, ridge):
    b = small_pop[:500]
    st_ = ParamState(np.full(7, 0.5), 2.0)
    g = grad_g_alpha_estimate(st_, ridge, b, 0.2)
    gs = smoothed_grad_g(st_, SmoothedSurrogate(ridge, 1e-9), b, 0.2)
    assert np.allclose(g, gs, atol=1e-9)
