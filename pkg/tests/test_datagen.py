import math

import numpy as np
import pytest
from scipy import stats

from cvarsgd import datagen
from cvarsgd.core import Batch, ValidationError
from cvarsgd.datagen import (
    ExampleSource, StreamExhausted, StreamSpec, counter_uniforms, derive_seed, materialize_population,
    next_example,
)

MASK = (1 << 64) - 1


def mix64_py(z):
    z ^= z >> 30
    z = (z * int(datagen._M1)) & MASK
    z ^= z >> 27
    z = (z * int(datagen._M2)) & MASK
    return z ^ (z >> 31)


def uniforms_py(key, counter, n_slots):
    g = int(datagen._GOLDEN)
    state = mix64_py(key ^ mix64_py((counter + g) & MASK))
    out = []
    for j in range(1, n_slots + 1):
        bits = mix64_py((state + j * g) & MASK)
        out.append(((bits >> 11) + 0.5) * 2.0 ** -53)
    return out


def test_counter_uniforms_match_scalar_reference():
    key = derive_seed(5, "x")
    counters = [0, 1, 2, 12345, 2 ** 63 + 7]
    u = counter_uniforms(key, counters, 4)
    for row, c in zip(u, counters):
        assert list(row) == uniforms_py(key, c, 4)
    assert np.all((u > 0) & (u < 1))


def test_counter_rows_are_order_independent():
    u = counter_uniforms(7, [5, 1, 3], 3)
    assert np.array_equal(u[0], counter_uniforms(7, [5], 3)[0])
    assert np.array_equal(u[2], counter_uniforms(7, [3], 3)[0])


def test_derive_seed_distinct_and_stable():
    seeds = {derive_seed(0, "train", i) for i in range(100)}
    assert len(seeds) == 100
    assert derive_seed(0, "train", 3) == derive_seed(0, "train", 3)
    assert derive_seed(0, "train", 3) != derive_seed(1, "train", 3)


def test_next_example_deterministic(spec):
    a, b = next_example(spec, 42), next_example(spec, 42)
    assert a == b
    assert next_example(spec, 43) != a


def test_ridge_paper_support_and_exact_targets(spec):
    pop = materialize_population(spec, 100_000)
    assert np.all((pop.X >= 0) & (pop.X <= 2))
    assert np.array_equal(pop.y, pop.X @ np.asarray(spec.theta_o))


def test_moments_of_uniform_features(spec):
    pop = materialize_population(spec, 100_000)
    n = len(pop)
    # Uniform[0, 2]: mean 1, variance 1/3, fourth central moment 1/5
    se_mean = math.sqrt(1 / 3 / n)
    assert np.all(np.abs(pop.X.mean(axis=0) - 1.0) < 4 * se_mean)
    se_var = math.sqrt((1 / 5 - 1 / 9) / n)
    assert np.all(np.abs(pop.X.var(axis=0, ddof=1) - 1 / 3) < 4 * se_var)
    # E y = <theta_o, 1>; var y = ||theta_o||^2 / 3
    th = np.asarray(spec.theta_o)
    se_y = math.sqrt(th @ th / 3 / n)
    assert abs(pop.y.mean() - th.sum()) < 4 * se_y


def test_uniformity_ks(spec):
    pop = materialize_population(spec, 20_000)
    for j in range(spec.dim_d):
        assert stats.kstest(pop.X[:, j] / 2.0, "uniform").pvalue > 1e-4


def test_noise_and_fictitious_targets():
    spec = StreamSpec("linear_gaussian_noise", dim_d=3, theta_o=(1.0, 0.0, -1.0), noise_std=0.5,
                      sigma_w=2.0, seed=9)
    pop = materialize_population(spec, 50_000)
    resid = pop.y - pop.X @ np.array([1.0, 0.0, -1.0])
    n = len(pop)
    assert abs(resid.mean()) < 4 * 0.5 / math.sqrt(n)
    assert abs(resid.std() - 0.5) < 4 * 0.5 / math.sqrt(2 * n)
    assert pop.w is not None
    assert abs(pop.w.std() - 2.0) < 4 * 2.0 / math.sqrt(2 * n)
    # w is independent of the features and of the noise
    assert abs(np.corrcoef(pop.w, resid)[0, 1]) < 4 / math.sqrt(n)
    assert stats.kstest(pop.w / 2.0, "norm").pvalue > 1e-4


def test_materialize_consistency(spec):
    assert materialize_population(spec, 1)[0] == next_example(spec, 0)
    a = materialize_population(spec, 10)
    b = materialize_population(spec, 10)
    assert np.array_equal(a.X, b.X)
    c = materialize_population(spec, 5, start=10)
    assert not np.any(np.isin(c.X[:, 0], a.X[:, 0]))
    with pytest.raises(ValueError):
        materialize_population(spec, 0)


def test_example_source_reads_sequentially(spec):
    src = ExampleSource(spec)
    first, second = src.take(3), src.take(2)
    ref = materialize_population(spec, 5)
    assert np.array_equal(np.vstack([first.X, second.X]), ref.X)
    capped = ExampleSource(spec, limit=4)
    assert len(list(capped)) == 4
    with pytest.raises(StreamExhausted):
        ExampleSource(spec, limit=2).take(3)


def test_finite_population_resamples():
    base = Batch(np.array([[1.0], [2.0], [3.0]]), [1.0, 2.0, 3.0])
    spec = StreamSpec("finite_population", population=base, seed=4)
    pop = materialize_population(spec, 3000)
    assert set(pop.y) == {1.0, 2.0, 3.0}
    counts = np.bincount(pop.y.astype(int))[1:]
    assert stats.chisquare(counts).pvalue > 1e-4


@pytest.mark.parametrize("kw", [dict(kind="nope"), dict(theta_o=(1.0,)), dict(x_low=2.0, x_high=0.0),
                                dict(noise_std=-1.0)])
def test_spec_validation(kw):
    with pytest.raises(ValidationError):
        StreamSpec(**kw)


def test_x_sq_mean():
    spec = StreamSpec(dim_d=2, theta_o=(1, 1), x_low=-1.0, x_high=3.0)
    pop = materialize_population(spec, 200_000)
    v = np.einsum("ij,ij->i", pop.X, pop.X)
    assert abs(v.mean() - spec.x_sq_mean) < 4 * v.std() / math.sqrt(v.size)
