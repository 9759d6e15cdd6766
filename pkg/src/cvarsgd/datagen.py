"""Seeded synthetic datastreams built on a counter-based generator.

Example ``k`` of a stream is a pure function of ``(spec, k)``: its uniforms
are SplitMix64 outputs seeded by a hash of the stream key and ``k``. Nothing
is shared between counters, so streams can be generated in any order, in
chunks, or in parallel with identical results.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from typing import Iterator, Optional, Tuple

import numpy as np
from scipy.special import ndtri

from .core import AugmentedExample, Batch, Example, ValidationError

KINDS = ("ridge_paper", "linear_gaussian_noise", "finite_population")
RIDGE_PAPER_THETA_O = (1.0, 0.8, 0.6, 0.4, 0.2, -0.5, 1.5)

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix64(z: np.ndarray) -> np.ndarray:
    z = z ^ (z >> np.uint64(30))
    z = z * _M1
    z = z ^ (z >> np.uint64(27))
    z = z * _M2
    return z ^ (z >> np.uint64(31))


def derive_seed(seed: int, *tags) -> int:
    """Deterministic 64-bit child seed for a (seed, tag, ...) path."""
    h = hashlib.blake2b(repr((int(seed),) + tags).encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little")


def counter_uniforms(key: int, counters, n_slots: int) -> np.ndarray:
    """Uniforms in the open interval (0, 1), shape ``(len(counters), n_slots)``.

    Row ``i`` depends only on ``key`` and ``counters[i]``.
    """
    c = np.asarray(counters, dtype=np.uint64).reshape(-1)
    k = np.full(c.shape, key & 0xFFFFFFFFFFFFFFFF, dtype=np.uint64)
    state = _mix64(k ^ _mix64(c + _GOLDEN))
    slots = (np.arange(1, n_slots + 1, dtype=np.uint64) * _GOLDEN)[None, :]
    bits = _mix64(state[:, None] + slots)
    return ((bits >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0 ** -53


@dataclass(frozen=True, eq=False)
class StreamSpec:
    """Distribution of a synthetic stream.

    ``x`` has i.i.d. Uniform[x_low, x_high] coordinates and
    ``y = <theta_o, x> + noise_std * N(0, 1)``. With ``sigma_w > 0`` every
    example also carries a fictitious target ``w ~ N(0, sigma_w^2)``. The
    ``finite_population`` kind instead resamples uniformly from ``population``.
    """

    kind: str = "ridge_paper"
    dim_d: int = 7
    theta_o: Tuple[float, ...] = RIDGE_PAPER_THETA_O
    noise_std: float = 0.0
    x_low: float = 0.0
    x_high: float = 2.0
    seed: int = 0
    sigma_w: float = 0.0
    population: Optional[Batch] = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown stream kind {self.kind!r}; expected one of {KINDS}")
        object.__setattr__(self, "theta_o", tuple(float(v) for v in self.theta_o))
        object.__setattr__(self, "seed", int(self.seed) & 0xFFFFFFFFFFFFFFFF)
        if self.kind == "finite_population":
            if self.population is None or len(self.population) == 0:
                raise ValidationError("finite_population stream needs a nonempty population")
            object.__setattr__(self, "dim_d", self.population.dim)
            return
        if self.dim_d < 1:
            raise ValidationError("dim_d must be positive")
        if len(self.theta_o) != self.dim_d:
            raise ValidationError(f"theta_o has {len(self.theta_o)} entries but dim_d={self.dim_d}")
        if not self.x_low < self.x_high:
            raise ValidationError("x_low must be below x_high")
        if self.noise_std < 0 or self.sigma_w < 0:
            raise ValidationError("noise_std and sigma_w must be nonnegative")

    def with_seed(self, seed: int) -> "StreamSpec":
        return replace(self, seed=seed)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind, "dim_d": self.dim_d, "theta_o": list(self.theta_o),
            "noise_std": self.noise_std, "x_low": self.x_low, "x_high": self.x_high,
            "seed": self.seed, "sigma_w": self.sigma_w,
        }

    @property
    def n_slots(self) -> int:
        return self.dim_d + 2

    @property
    def x_sq_mean(self) -> float:
        """``E||x||^2`` under the uniform feature law."""
        lo, hi = self.x_low, self.x_high
        return self.dim_d * (lo * lo + lo * hi + hi * hi) / 3.0


def generate(spec: StreamSpec, counters) -> Batch:
    """Examples for the given counters, as a Batch (with ``w`` iff ``sigma_w > 0``)."""
    counters = np.asarray(counters, dtype=np.uint64).reshape(-1)
    d = spec.dim_d
    u = counter_uniforms(spec.seed, counters, spec.n_slots)
    if spec.kind == "finite_population":
        pop = spec.population
        idx = np.minimum((u[:, 0] * len(pop)).astype(np.int64), len(pop) - 1)
        X, y = pop.X[idx], pop.y[idx]
    else:
        X = spec.x_low + (spec.x_high - spec.x_low) * u[:, :d]
        y = X @ np.asarray(spec.theta_o)
        if spec.noise_std > 0:
            y = y + spec.noise_std * ndtri(u[:, d])
    w = spec.sigma_w * ndtri(u[:, d + 1]) if spec.sigma_w > 0 else None
    return Batch(X, y, w)


def next_example(spec: StreamSpec, counter: int) -> Example:
    """The ``counter``-th example of the stream; identical on every call."""
    return generate(spec, [counter])[0]


def materialize_population(spec: StreamSpec, n: int, start: int = 0) -> Batch:
    """Examples for counters ``start .. start + n - 1``."""
    if n < 1:
        raise ValueError("population size must be positive")
    return generate(spec, np.arange(start, start + n, dtype=np.uint64))


class StreamExhausted(RuntimeError):
    pass


class ExampleSource:
    """Sequential reader over a stream, optionally capped at ``limit`` examples.

    The source only holds a counter; drawing is delegated to :func:`generate`.
    """

    def __init__(self, spec: StreamSpec, start: int = 0, limit: Optional[int] = None):
        self.spec = spec
        self.counter = int(start)
        self.start = int(start)
        self.limit = limit

    @property
    def remaining(self) -> Optional[int]:
        if self.limit is None:
            return None
        return self.limit - (self.counter - self.start)

    def take(self, n: int) -> Batch:
        if self.limit is not None and n > self.remaining:
            raise StreamExhausted(f"requested {n} examples but only {self.remaining} remain")
        b = materialize_population(self.spec, n, start=self.counter)
        self.counter += n
        return b

    def __iter__(self) -> Iterator[Example]:
        while self.remaining is None or self.remaining > 0:
            yield self.take(1)[0]
