"""Value types shared across the package.

Every type here is an immutable value: arrays are copied on construction
and marked read-only, so instances can be shared freely between threads.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np


class ValidationError(ValueError):
    """Raised when a value violates the invariants of its type."""


class DimensionError(ValueError):
    """Raised when vector dimensions of interacting objects disagree."""


def _frozen_vector(values, name: str) -> np.ndarray:
    arr = np.array(values, dtype=float, copy=True).reshape(-1)
    bad = np.flatnonzero(~np.isfinite(arr))
    if bad.size:
        raise ValidationError(f"{name}[{bad[0]}] not finite")
    arr.setflags(write=False)
    return arr


def _finite_scalar(value, name: str) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise ValidationError(f"{name} not finite")
    return value


@dataclass(frozen=True, eq=False)
class Example:
    """One datastream element: feature vector ``x`` and scalar target ``y``."""

    x: np.ndarray
    y: float

    def __post_init__(self):
        object.__setattr__(self, "x", _frozen_vector(self.x, "x"))
        object.__setattr__(self, "y", _finite_scalar(self.y, "y"))

    @property
    def dim(self) -> int:
        return self.x.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Example) or isinstance(other, AugmentedExample):
            return NotImplemented
        return self.y == other.y and np.array_equal(self.x, other.x)


@dataclass(frozen=True, eq=False)
class AugmentedExample(Example):
    """Example carrying a fictitious Gaussian target ``w`` drawn independently of (x, y)."""

    w: float = 0.0

    def __post_init__(self):
        super().__post_init__()
        object.__setattr__(self, "w", _finite_scalar(self.w, "w"))

    @property
    def base(self) -> Example:
        return Example(self.x, self.y)

    def __eq__(self, other):
        if not isinstance(other, AugmentedExample):
            return NotImplemented
        return self.y == other.y and self.w == other.w and np.array_equal(self.x, other.x)


@dataclass(frozen=True, eq=False)
class ParamState:
    """Joint iterate: predictor parameters ``theta`` and the auxiliary scalar ``t``."""

    theta: np.ndarray
    t: float

    def __post_init__(self):
        object.__setattr__(self, "theta", _frozen_vector(self.theta, "theta"))
        object.__setattr__(self, "t", _finite_scalar(self.t, "t"))

    @property
    def dim(self) -> int:
        return self.theta.shape[0]

    def as_vector(self) -> np.ndarray:
        """Stacked ``[theta; t]``."""
        return np.append(self.theta, self.t)

    @classmethod
    def from_vector(cls, z) -> "ParamState":
        z = np.asarray(z, dtype=float)
        return cls(z[:-1], z[-1])

    @classmethod
    def zeros(cls, m: int) -> "ParamState":
        return cls(np.zeros(m), 0.0)

    def __eq__(self, other):
        if not isinstance(other, ParamState):
            return NotImplemented
        return self.t == other.t and np.array_equal(self.theta, other.theta)


def validate_state(s: ParamState) -> ParamState:
    """Return ``s`` unchanged if every entry is finite, else raise ValidationError.

    ParamState validates on construction, but numpy arrays can be swapped in
    through ``object.__setattr__``; this re-checks the stored values.
    """
    theta = np.asarray(s.theta, dtype=float).reshape(-1)
    bad = np.flatnonzero(~np.isfinite(theta))
    if bad.size:
        raise ValidationError(f"theta[{bad[0]}] not finite")
    if not math.isfinite(s.t):
        raise ValidationError("t not finite")
    return s


@dataclass(frozen=True)
class ConfidenceLevel:
    """CV@R confidence level, the tail fraction in (0, 1]."""

    alpha: float

    def __post_init__(self):
        a = float(self.alpha)
        if not (0.0 < a <= 1.0):
            raise ValidationError(f"alpha must lie in (0, 1], got {self.alpha!r}")
        object.__setattr__(self, "alpha", a)

    def __float__(self):
        return self.alpha


AlphaLike = Union[float, ConfidenceLevel]


def as_alpha(alpha: AlphaLike) -> float:
    """Validate a confidence level given as a float or ConfidenceLevel."""
    return ConfidenceLevel(float(alpha)).alpha


@dataclass(frozen=True)
class StepSizes:
    beta: float
    gamma: float

    def __post_init__(self):
        for name in ("beta", "gamma"):
            v = _finite_scalar(getattr(self, name), name)
            if v <= 0:
                raise ValidationError(f"{name} must be positive, got {v}")
            object.__setattr__(self, name, v)


@dataclass(frozen=True)
class LossConstants:
    """Declared regularity constants of a loss.

    mu: strong convexity (PL) parameter; L_smooth: gradient Lipschitz
    constant; G_lip: Lipschitz constant of the loss; l_floor: lowest
    attainable loss value.
    """

    mu: float
    L_smooth: float
    G_lip: float
    l_floor: float = 0.0

    def __post_init__(self):
        for name in ("mu", "L_smooth", "G_lip", "l_floor"):
            v = _finite_scalar(getattr(self, name), name)
            if name != "l_floor" and v < 0:
                raise ValidationError(f"{name} must be nonnegative, got {v}")
            object.__setattr__(self, name, v)
        if self.mu > 0 and self.L_smooth > 0 and self.mu > self.L_smooth:
            raise ValidationError(f"mu={self.mu} exceeds L_smooth={self.L_smooth}")


@dataclass(frozen=True, eq=False)
class Batch:
    """Columnar block of examples: ``X`` is (n, d), ``y`` and optional ``w`` are (n,)."""

    X: np.ndarray
    y: np.ndarray
    w: Optional[np.ndarray] = None

    def __post_init__(self):
        X = np.array(self.X, dtype=float, copy=True)
        if X.ndim == 1:
            X = X[None, :]
        y = np.array(self.y, dtype=float, copy=True).reshape(-1)
        if X.shape[0] != y.shape[0]:
            raise DimensionError(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValidationError("batch contains non-finite values")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        if self.w is not None:
            w = np.array(self.w, dtype=float, copy=True).reshape(-1)
            if w.shape != y.shape:
                raise DimensionError("w must have one entry per example")
            w.setflags(write=False)
            object.__setattr__(self, "w", w)

    def __len__(self):
        return self.y.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def __getitem__(self, i) -> Union[Example, "Batch"]:
        if isinstance(i, slice):
            return Batch(self.X[i], self.y[i], None if self.w is None else self.w[i])
        if self.w is None:
            return Example(self.X[i], self.y[i])
        return AugmentedExample(self.X[i], self.y[i], self.w[i])

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def subset(self, mask) -> "Batch":
        return Batch(self.X[mask], self.y[mask], None if self.w is None else self.w[mask])

    @classmethod
    def from_examples(cls, examples: Sequence[Example]) -> "Batch":
        examples = list(examples)
        if not examples:
            raise ValueError("empty batch")
        X = np.stack([e.x for e in examples])
        y = np.array([e.y for e in examples])
        w = None
        if all(isinstance(e, AugmentedExample) for e in examples):
            w = np.array([e.w for e in examples])
        return cls(X, y, w)


BatchLike = Union[Batch, Sequence[Example]]


def as_batch(batch: BatchLike) -> Batch:
    if isinstance(batch, Batch):
        if len(batch) == 0:
            raise ValueError("empty batch")
        return batch
    return Batch.from_examples(batch)


@dataclass(frozen=True)
class TraceRecord:
    iter: int
    state: ParamState
    in_event: bool
    loss_sample: float
    g_alpha_est: Optional[float]


class Trace:
    """Per-iteration history of a run, stored column-wise.

    Row 0 is the initial state; its ``in_event`` is False and ``loss_sample``
    is NaN because no example has been consumed yet. ``g_alpha_est`` is NaN
    where no estimate was taken.
    """

    def __init__(self, theta, t, in_event, loss_sample, g_alpha_est, w=None):
        self.theta = np.asarray(theta, dtype=float)
        self.t = np.asarray(t, dtype=float)
        self.in_event = np.asarray(in_event, dtype=bool)
        self.loss_sample = np.asarray(loss_sample, dtype=float)
        self.g_alpha_est = np.asarray(g_alpha_est, dtype=float)
        self.w = None if w is None else np.asarray(w, dtype=float)
        n = self.t.shape[0]
        for name in ("theta", "in_event", "loss_sample", "g_alpha_est"):
            if getattr(self, name).shape[0] != n:
                raise DimensionError(f"trace column {name} has wrong length")

    def __len__(self):
        return self.t.shape[0]

    @property
    def iters(self) -> np.ndarray:
        return np.arange(len(self))

    def state(self, n: int) -> ParamState:
        return ParamState(self.theta[n], self.t[n])

    @property
    def final_state(self) -> ParamState:
        return self.state(len(self) - 1)

    @property
    def eval_iters(self) -> np.ndarray:
        return np.flatnonzero(~np.isnan(self.g_alpha_est))

    def record(self, n: int) -> TraceRecord:
        g = self.g_alpha_est[n]
        return TraceRecord(n, self.state(n), bool(self.in_event[n]),
                           float(self.loss_sample[n]), None if np.isnan(g) else float(g))

    def records(self):
        for n in range(len(self)):
            yield self.record(n)

    def __eq__(self, other):
        if not isinstance(other, Trace):
            return NotImplemented
        return (np.array_equal(self.theta, other.theta)
                and np.array_equal(self.t, other.t)
                and np.array_equal(self.in_event, other.in_event)
                and np.array_equal(self.loss_sample, other.loss_sample, equal_nan=True)
                and np.array_equal(self.g_alpha_est, other.g_alpha_est, equal_nan=True))
