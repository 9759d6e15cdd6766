import numpy as np
import pytest

from cvarsgd.core import AugmentedExample, Batch, DimensionError, Example, ParamState, StepSizes, ValidationError
from cvarsgd.datagen import ExampleSource, StreamSpec, derive_seed, materialize_population
from cvarsgd.losses import RidgeLoss, SmoothedSurrogate
from cvarsgd.objective import g_alpha_estimate
from cvarsgd.optimizer import (
    DIVERGENCE_LIMIT, DivergenceError, IncompleteRunError, SgdConfig, cvar_sgd_step, lms_step, run,
    run_lms, smoothed_sgd_step,
)

STEPS = StepSizes(0.002, 0.001)


def test_step_by_hand():
    loss = RidgeLoss(0.5)
    e = Example([1.0, 2.0], 3.0)
    # loss at theta = (1, -1) is 17, gradient (-7, -17)
    st, b = cvar_sgd_step(ParamState([1.0, -1.0], 0.0), e, loss, 0.5, StepSizes(0.1, 0.2))
    assert b
    assert st.t == pytest.approx(0.0 - 0.2 * (1 - 1 / 0.5))
    assert np.allclose(st.theta, [1.0 + 0.1 / 0.5 * 7, -1.0 + 0.1 / 0.5 * 17])
    # outside the event theta stays, t moves down by gamma
    st, b = cvar_sgd_step(ParamState([1.0, -1.0], 17.0), e, loss, 0.5, StepSizes(0.1, 0.2))
    assert not b
    assert st.t == pytest.approx(17.0 - 0.2)
    assert np.array_equal(st.theta, [1.0, -1.0])


def test_step_uses_old_state_for_both_blocks():
    # the indicator and the gradient are both taken at the old (theta, t)
    loss = RidgeLoss(0.1)
    e = Example([1.0], 1.0)
    s0 = ParamState([0.0], 0.999)
    s1, b = cvar_sgd_step(s0, e, loss, 0.5, StepSizes(0.01, 10.0))
    assert b
    assert np.allclose(s1.theta, -0.01 / 0.5 * loss.grad_theta([0.0], [1.0], 1.0))


def test_step_dimension_mismatch():
    with pytest.raises(DimensionError):
        cvar_sgd_step(ParamState([0.0, 0.0], 0.0), Example([1.0], 1.0), RidgeLoss(0.1), 0.5, STEPS)


def test_smoothed_step_uses_w():
    loss = RidgeLoss(0.1)
    s = SmoothedSurrogate(loss, 1.0)
    st0 = ParamState([0.0], 0.0)
    # loss is 1; w = 2 pushes the surrogate below t, w = -2 keeps it above
    _, b = smoothed_sgd_step(st0, AugmentedExample([1.0], 1.0, 2.0), s, 0.5, STEPS)
    assert not b
    _, b = smoothed_sgd_step(st0, AugmentedExample([1.0], 1.0, -2.0), s, 0.5, STEPS)
    assert b


def test_lms_step():
    loss = RidgeLoss(0.5)
    th = lms_step([1.0, -1.0], Example([1.0, 2.0], 3.0), loss, 0.1)
    assert np.allclose(th, [1.7, 0.7])
    with pytest.raises(ValidationError):
        lms_step([1.0, -1.0], Example([1.0, 2.0], 3.0), loss, 0.0)


def config(T, **kw):
    return SgdConfig(kw.pop("alpha", 0.2), kw.pop("steps", STEPS), T, **kw)


def test_run_matches_step_loop(spec, ridge):
    T = 300
    tr = run(config(T), ridge, ExampleSource(spec), ExampleSource(spec.with_seed(1)))
    data = materialize_population(spec, T)
    st = ParamState.zeros(7)
    for n in range(T):
        st, b = cvar_sgd_step(st, data[n], ridge, 0.2, STEPS)
        assert tr.in_event[n + 1] == b
        assert np.array_equal(tr.theta[n + 1], st.theta) and tr.t[n + 1] == st.t
        assert tr.loss_sample[n + 1] == ridge.value(tr.theta[n], data.X[n], data.y[n])


def test_run_trace_shape_and_cadence(spec, ridge):
    tr = run(config(250, eval_cadence=100, eval_batch=500), ridge, ExampleSource(spec),
             ExampleSource(spec.with_seed(2)))
    assert len(tr) == 251
    assert list(tr.eval_iters) == [0, 100, 200]
    assert np.isnan(tr.loss_sample[0]) and not tr.in_event[0]
    ev = materialize_population(spec.with_seed(2), 500)
    assert tr.g_alpha_est[0] == g_alpha_estimate(tr.state(0), ridge, ev, 0.2).value


def test_run_horizon_zero(spec, ridge):
    tr = run(config(0), ridge, ExampleSource(spec), ExampleSource(spec.with_seed(2)))
    assert len(tr) == 1 and tr.final_state == ParamState.zeros(7)
    assert list(tr.eval_iters) == [0]


def test_run_is_deterministic(spec, ridge):
    a = run(config(500), ridge, ExampleSource(spec), ExampleSource(spec.with_seed(3)))
    b = run(config(500), ridge, ExampleSource(spec), ExampleSource(spec.with_seed(3)))
    assert a == b


def test_run_accepts_batch_and_iterables(spec, ridge):
    data = materialize_population(spec, 50)
    ev = lambda n: materialize_population(spec.with_seed(5), n)  # noqa: E731
    a = run(config(50, eval_batch=10), ridge, data, ev)
    b = run(config(50, eval_batch=10), ridge, list(data), ev)
    assert a == b


def test_risk_neutral_run_equals_lms(spec, ridge):
    T = 2000
    tr = run(config(T, alpha=1.0), ridge, ExampleSource(spec), ExampleSource(spec.with_seed(4)))
    lms = run_lms(np.zeros(7), ridge, ExampleSource(spec), STEPS.beta, T)
    assert np.all(np.diff(tr.t) <= 0)
    assert np.array_equal(tr.theta, lms)


def test_divergence_guard(spec, ridge):
    with pytest.raises(DivergenceError) as info:
        run(config(1000, steps=StepSizes(5.0, 0.001)), ridge, ExampleSource(spec),
            ExampleSource(spec.with_seed(6)))
    err = info.value
    assert len(err.trace) == err.iteration + 1
    assert np.linalg.norm(err.trace.theta[-1]) > DIVERGENCE_LIMIT or abs(err.trace.t[-1]) > DIVERGENCE_LIMIT


def test_incomplete_stream(spec, ridge):
    with pytest.raises(IncompleteRunError) as info:
        run(config(100), ridge, ExampleSource(spec, limit=40), ExampleSource(spec.with_seed(6)))
    assert info.value.completed == 40
    assert len(info.value.trace) == 41


def test_smoothed_run_requires_w(spec, ridge):
    with pytest.raises(ValidationError):
        run(config(10, sigma=0.5), ridge, ExampleSource(spec), ExampleSource(spec.with_seed(7)))


def test_smoothed_run_replays_from_trace(ridge):
    spec = StreamSpec("ridge_paper", seed=derive_seed(1, "w"), sigma_w=0.5)
    tr = run(config(200, sigma=0.5), ridge, ExampleSource(spec), ExampleSource(spec.with_seed(8)))
    data = materialize_population(spec, 200)
    assert np.array_equal(tr.w[1:], data.w)
    s = SmoothedSurrogate(ridge, 0.5)
    st = ParamState.zeros(7)
    for n in range(200):
        st, _ = smoothed_sgd_step(st, data[n], s, 0.2, STEPS)
    assert st == tr.final_state


def test_config_validation():
    with pytest.raises(ValidationError):
        SgdConfig(0.0, STEPS, 10)
    with pytest.raises(ValidationError):
        SgdConfig(0.2, STEPS, -1)
    with pytest.raises(DimensionError):
        SgdConfig(0.2, STEPS, 10, init=ParamState([0.0], 0.0)).initial_state(3)
