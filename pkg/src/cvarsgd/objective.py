"""CV@R estimators and the joint objective over (theta, t).

The joint objective is ``G(theta, t) = E[t + (l(theta) - t)_+ / alpha]``;
minimizing it over ``t`` recovers CV@R of the loss at ``theta``. All
estimators here are plain sample averages over a fixed batch.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import BatchLike, DimensionError, Example, ParamState, as_alpha, as_batch
from .losses import INV_SQRT_2PI, LossModel, SmoothedSurrogate, norm_cdf, r_sigma


@dataclass(frozen=True)
class GEstimate:
    value: float
    std_error: float
    n_samples: int


def _estimate(samples: np.ndarray) -> GEstimate:
    n = samples.shape[0]
    se = float(np.std(samples, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return GEstimate(float(np.mean(samples)), se, n)


def batch_losses(state: ParamState, loss: LossModel, batch: BatchLike) -> np.ndarray:
    b = as_batch(batch)
    if b.dim != state.dim:
        raise DimensionError(f"state has dimension {state.dim} but examples have {b.dim}")
    return loss.values(state.theta, b.X, b.y)


def in_event(state: ParamState, loss: LossModel, e: Example) -> bool:
    """Whether ``e`` lies in the event ``{loss(theta; e) - t > 0}`` (strict)."""
    if e.dim != state.dim:
        raise DimensionError(f"state has dimension {state.dim} but example has {e.dim}")
    return loss.value(state.theta, e.x, e.y) - state.t > 0


def event_mass(state: ParamState, loss: LossModel, batch: BatchLike) -> float:
    """Empirical probability of the event at ``state`` over ``batch``."""
    return float(np.mean(batch_losses(state, loss, batch) - state.t > 0))


def _samples(samples) -> np.ndarray:
    s = np.asarray(samples, dtype=float).reshape(-1)
    if s.size == 0:
        raise ValueError("empty sample")
    return s


def cvar_sorted(samples, alpha) -> float:
    """Empirical superquantile: mean of the worst ``alpha`` fraction of samples.

    When ``alpha * n`` is not an integer, the boundary sample enters with
    fractional weight, so this equals the exact minimum of the variational
    form on the empirical distribution.
    """
    a = as_alpha(alpha)
    s = np.sort(_samples(samples))[::-1]
    n = s.size
    an = a * n
    k = min(n, max(1, math.ceil(an)))
    head = float(np.sum(s[: k - 1])) if k > 1 else 0.0
    return float((head + (an - (k - 1)) * s[k - 1]) / an)


def _variational_objective(s: np.ndarray, t: float, a: float) -> float:
    return t + float(np.mean(np.maximum(s - t, 0.0))) / a


def cvar_variational(samples, alpha, tol: float = 1e-10):
    """CV@R as ``min_t t + mean((s - t)_+) / alpha`` by ternary search over t.

    The objective is convex and piecewise linear in ``t`` with slopes in
    ``[1 - 1/alpha, 1]``, so shrinking the bracket to width ``alpha * tol``
    pins the value to within ``tol``.

    Returns
    -------
    value, t_star : float
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    a = as_alpha(alpha)
    s = _samples(samples)
    lo, hi = float(np.min(s)), float(np.max(s))
    f = lambda t: _variational_objective(s, t, a)  # noqa: E731
    width = a * tol * 0.5
    for _ in range(1000):
        if hi - lo <= width:
            break
        m1 = lo + (hi - lo) / 3.0
        m2 = hi - (hi - lo) / 3.0
        if not lo < m1 < m2 < hi:
            # bracket already at floating-point resolution
            break
        f1, f2 = f(m1), f(m2)
        if f1 < f2:
            hi = m2
        elif f1 > f2:
            lo = m1
        else:
            lo, hi = m1, m2
    t_star = 0.5 * (lo + hi)
    return f(t_star), t_star


def g_alpha_estimate(state: ParamState, loss: LossModel, batch: BatchLike, alpha) -> GEstimate:
    """Sample mean of ``t + (loss - t)_+ / alpha`` over ``batch``, with its standard error."""
    a = as_alpha(alpha)
    l = batch_losses(state, loss, batch)
    return _estimate(state.t + np.maximum(l - state.t, 0.0) / a)


def grad_g_alpha_estimate(state: ParamState, loss: LossModel, batch: BatchLike, alpha) -> np.ndarray:
    """Batch gradient of the joint objective, stacked as ``[theta-block; t]``.

    Examples with ``loss == t`` fall outside the event and contribute nothing.
    """
    a = as_alpha(alpha)
    b = as_batch(batch)
    l = batch_losses(state, loss, b)
    ind = l - state.t > 0
    n = len(b)
    g_theta = np.zeros(state.dim)
    if ind.any():
        g_theta = loss.grads(state.theta, b.X[ind], b.y[ind]).sum(axis=0) / (a * n)
    return np.append(g_theta, 1.0 - np.count_nonzero(ind) / (a * n))


def smoothed_g_estimate(state: ParamState, s: SmoothedSurrogate, batch: BatchLike, alpha) -> GEstimate:
    """Joint objective of the smoothed surrogate, with ``w`` integrated out exactly.

    Each sample contributes ``t + r_sigma(loss - t) / alpha``; no ``w`` is drawn.
    """
    a = as_alpha(alpha)
    l = batch_losses(state, s.inner, batch)
    return _estimate(state.t + np.asarray(r_sigma(s.sigma, l - state.t)) / a)


def smoothed_grad_g(state: ParamState, s: SmoothedSurrogate, batch: BatchLike, alpha) -> np.ndarray:
    """Gradient of :func:`smoothed_g_estimate`: indicators replaced by ``Phi((loss - t) / sigma)``."""
    a = as_alpha(alpha)
    b = as_batch(batch)
    l = batch_losses(state, s.inner, b)
    weight = norm_cdf((l - state.t) / s.sigma)
    n = len(b)
    g_theta = (weight[:, None] * s.inner.grads(state.theta, b.X, b.y)).sum(axis=0) / (a * n)
    return np.append(g_theta, 1.0 - float(np.sum(weight)) / (a * n))


def smoothing_gap_bound(sigma: float, alpha) -> float:
    """Uniform upper bound ``sigma / (alpha sqrt(2 pi))`` on smoothed minus plain objective."""
    return sigma * INV_SQRT_2PI / as_alpha(alpha)
