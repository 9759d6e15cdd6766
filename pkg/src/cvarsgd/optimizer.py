"""CV@R-SGD, its smoothed variant, and the LMS baseline.

One example is consumed per iteration. With ``b`` the event indicator at
the current state, the updates are::

    t     <- t - gamma * (1 - b / alpha)
    theta <- theta - beta * (b / alpha) * grad_theta loss(theta; x, y)

Both use the old state. The optimizer owns no randomness: the fictitious
targets of the smoothed variant arrive attached to the examples.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Union

import numpy as np

from .core import (
    AugmentedExample, Batch, ConfidenceLevel, DimensionError, Example, ParamState,
    StepSizes, Trace, ValidationError, as_alpha,
)
from .datagen import ExampleSource, StreamExhausted
from .losses import LossModel, SmoothedSurrogate
from .objective import g_alpha_estimate

DIVERGENCE_LIMIT = 1e12


class DivergenceError(RuntimeError):
    """Iterates left the finite-value guard; ``trace`` holds the history so far."""

    def __init__(self, message: str, trace: Trace, iteration: int):
        super().__init__(message)
        self.trace = trace
        self.iteration = iteration


class IncompleteRunError(StreamExhausted):
    """The stream ran dry before the horizon; ``trace`` covers the completed iterations."""

    def __init__(self, message: str, trace: Trace, completed: int):
        super().__init__(message)
        self.trace = trace
        self.completed = completed


@dataclass(frozen=True)
class SgdConfig:
    """Settings of one CV@R-SGD run.

    ``sigma = 0`` runs the plain recursion; ``sigma > 0`` runs the smoothed
    one and requires examples carrying ``w``. ``seed`` is not consumed by the
    optimizer; it is recorded so traces can be traced back to their stream.
    """

    alpha: float
    steps: StepSizes
    horizon_T: int
    init: Optional[ParamState] = None
    sigma: float = 0.0
    eval_cadence: int = 100
    eval_batch: int = 10_000
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "alpha", ConfidenceLevel(float(self.alpha)).alpha)
        if self.horizon_T < 0:
            raise ValidationError("horizon_T must be nonnegative")
        if self.eval_cadence < 1 or self.eval_batch < 1:
            raise ValidationError("eval_cadence and eval_batch must be positive")
        if self.sigma < 0:
            raise ValidationError("sigma must be nonnegative")

    def initial_state(self, m: int) -> ParamState:
        if self.init is None:
            return ParamState.zeros(m)
        if self.init.dim != m:
            raise DimensionError(f"initial theta has dimension {self.init.dim}, loss expects {m}")
        return self.init


def _update(theta, t, b, grad, alpha, beta, gamma):
    # shared by the single-step API and the run loop so both are bit-identical
    t_next = t - gamma * (1.0 - b / alpha)
    if b:
        theta = theta - (beta / alpha) * grad
    return theta, t_next


def cvar_sgd_step(state: ParamState, e: Example, loss: LossModel, alpha, steps: StepSizes):
    """One CV@R-SGD iteration on example ``e``.

    Returns
    -------
    next_state : ParamState
    in_event : bool
        Whether ``loss(theta; e) - t > 0`` at the old state.
    """
    a = as_alpha(alpha)
    if e.dim != state.dim:
        raise DimensionError(f"state has dimension {state.dim} but example has {e.dim}")
    l = loss.value(state.theta, e.x, e.y)
    b = l - state.t > 0
    grad = loss.grad_theta(state.theta, e.x, e.y) if b else None
    theta, t = _update(state.theta, state.t, float(b), grad, a, steps.beta, steps.gamma)
    return ParamState(theta, t), bool(b)


def smoothed_sgd_step(state: ParamState, ae: AugmentedExample, s: SmoothedSurrogate, alpha, steps: StepSizes):
    """CV@R-SGD iteration on the surrogate ``loss - w`` using the attached draw ``ae.w``."""
    a = as_alpha(alpha)
    if ae.dim != state.dim:
        raise DimensionError(f"state has dimension {state.dim} but example has {ae.dim}")
    l = s.inner.value(state.theta, ae.x, ae.y)
    b = l - ae.w - state.t > 0
    grad = s.inner.grad_theta(state.theta, ae.x, ae.y) if b else None
    theta, t = _update(state.theta, state.t, float(b), grad, a, steps.beta, steps.gamma)
    return ParamState(theta, t), bool(b)


def lms_step(theta, e: Example, loss: LossModel, beta: float) -> np.ndarray:
    """Plain SGD step on the expected loss: ``theta - beta * grad``."""
    if not beta > 0:
        raise ValidationError("beta must be positive")
    if np.shape(theta)[0] != e.dim:
        raise DimensionError(f"theta has dimension {np.shape(theta)[0]} but example has {e.dim}")
    return np.asarray(theta, dtype=float) - beta * loss.grad_theta(theta, e.x, e.y)


StreamLike = Union[ExampleSource, Batch, Iterable[Example]]


def _pull(stream: StreamLike, n: int) -> Batch:
    """Up to ``n`` examples from ``stream`` as a Batch (fewer if it runs dry)."""
    if isinstance(stream, Batch):
        return stream[:n]
    if isinstance(stream, ExampleSource):
        avail = n if stream.remaining is None else min(n, stream.remaining)
        return stream.take(avail) if avail > 0 else None
    got = []
    for e in stream:
        got.append(e)
        if len(got) == n:
            break
    return Batch.from_examples(got) if got else None


def _stream_dim(stream, data, config) -> int:
    if data is not None:
        return data.dim
    if isinstance(stream, ExampleSource):
        return stream.spec.dim_d
    if isinstance(stream, Batch):
        return stream.dim
    if config.init is not None:
        return config.init.dim
    raise ValidationError("cannot infer the parameter dimension; pass config.init")


def _eval_batch(eval_source, n: int) -> Batch:
    if isinstance(eval_source, ExampleSource):
        return eval_source.take(n)
    return eval_source(n)


def run(config: SgdConfig, loss: LossModel, stream: StreamLike, eval_source) -> Trace:
    """Iterate CV@R-SGD for ``config.horizon_T`` steps.

    Parameters
    ----------
    stream
        Training examples: an ExampleSource, a Batch, or any iterable of Examples.
    eval_source
        ExampleSource (or callable ``n -> Batch``) independent of ``stream``;
        every ``eval_cadence`` iterations the objective is estimated on
        ``eval_batch`` fresh examples from it.

    Returns
    -------
    Trace
        ``horizon_T + 1`` rows, row 0 being the initial state.

    Raises
    ------
    IncompleteRunError
        The stream ran out early; the partial trace is attached.
    DivergenceError
        An iterate exceeded the finite-value guard.
    """
    a, beta, gamma = config.alpha, config.steps.beta, config.steps.gamma
    T = config.horizon_T
    data = _pull(stream, T) if T > 0 else None
    n_avail = 0 if data is None else len(data)
    smoothed = config.sigma > 0
    if smoothed and data is not None and data.w is None:
        raise ValidationError("smoothed run (sigma > 0) needs examples carrying w")

    init = config.initial_state(_stream_dim(stream, data, config))
    m = init.dim
    if data is not None and data.dim != m:
        raise DimensionError(f"state has dimension {m} but examples have {data.dim}")

    thetas = np.empty((n_avail + 1, m))
    ts = np.empty(n_avail + 1)
    flags = np.zeros(n_avail + 1, dtype=bool)
    samples = np.full(n_avail + 1, np.nan)
    g_est = np.full(n_avail + 1, np.nan)
    theta, t = np.array(init.theta, dtype=float), float(init.t)
    thetas[0], ts[0] = theta, t

    def snapshot(upto):
        w = None if not smoothed else np.concatenate([[np.nan], data.w[:upto]])
        return Trace(thetas[: upto + 1], ts[: upto + 1], flags[: upto + 1],
                     samples[: upto + 1], g_est[: upto + 1], w)

    def evaluate(n):
        batch = _eval_batch(eval_source, config.eval_batch)
        g_est[n] = g_alpha_estimate(ParamState(thetas[n], ts[n]), loss, batch, a).value

    evaluate(0)
    for n in range(n_avail):
        x, y = data.X[n], data.y[n]
        l = loss.value(theta, x, y)
        excess = l - data.w[n] if smoothed else l
        b = excess - t > 0
        grad = loss.grad_theta(theta, x, y) if b else None
        theta, t = _update(theta, t, float(b), grad, a, beta, gamma)
        thetas[n + 1], ts[n + 1] = theta, t
        flags[n + 1], samples[n + 1] = b, l
        if not (abs(t) <= DIVERGENCE_LIMIT and np.linalg.norm(theta) <= DIVERGENCE_LIMIT):
            raise DivergenceError(
                f"iterate left the finite-value guard at iteration {n + 1} "
                f"(|t|={abs(t):.3g}, ||theta||={np.linalg.norm(theta):.3g})",
                snapshot(n + 1), n + 1)
        if (n + 1) % config.eval_cadence == 0:
            evaluate(n + 1)

    trace = snapshot(n_avail)
    if n_avail < T:
        raise IncompleteRunError(f"stream exhausted after {n_avail} of {T} iterations", trace, n_avail)
    return trace


def run_lms(theta0, loss: LossModel, stream: StreamLike, beta: float, horizon_T: int) -> np.ndarray:
    """LMS iterates ``theta^0 .. theta^T`` as a ``(T + 1, m)`` array."""
    if not beta > 0:
        raise ValidationError("beta must be positive")
    data = _pull(stream, horizon_T) if horizon_T > 0 else None
    n_avail = 0 if data is None else len(data)
    theta = np.array(theta0, dtype=float)
    out = np.empty((n_avail + 1, theta.shape[0]))
    out[0] = theta
    for n in range(n_avail):
        theta = theta - beta * loss.grad_theta(theta, data.X[n], data.y[n])
        out[n + 1] = theta
    if n_avail < horizon_T:
        raise StreamExhausted(f"stream exhausted after {n_avail} of {horizon_T} iterations")
    return out
