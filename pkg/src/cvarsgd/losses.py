"""Loss models with analytic gradients and declared regularity constants.

A loss model evaluates ``loss(f(x, theta), y)`` for one example or for a
whole batch at once. The batch methods are what the estimators use; the
single-example methods are what the streaming optimizer uses.
"""
from __future__ import annotations

import math
from abc import ABC, abstractmethod
from typing import Optional

import numpy as np
from scipy.special import erfc, erfcx

from .core import AugmentedExample, DimensionError, Example, LossConstants, ValidationError, as_alpha

SQRT2 = math.sqrt(2.0)
SQRT_2PI = math.sqrt(2.0 * math.pi)
INV_SQRT_2PI = 1.0 / SQRT_2PI


def norm_cdf(z):
    """Standard Gaussian CDF via erfc; accurate in relative terms in both tails."""
    return 0.5 * erfc(-np.asarray(z, dtype=float) / SQRT2)


def norm_pdf(z):
    z = np.asarray(z, dtype=float)
    return INV_SQRT_2PI * np.exp(-0.5 * z * z)


def _gauss_softplus_excess(u):
    # h(u) = phi(u) - u * (1 - Phi(u)) for u >= 0, written with erfcx so the
    # cancellation stays relative; h is decreasing from 1/sqrt(2 pi) to 0.
    u = np.asarray(u, dtype=float)
    bracket = INV_SQRT_2PI - 0.5 * u * erfcx(u / SQRT2)
    h = np.exp(-0.5 * u * u) * bracket
    return np.clip(h, 0.0, INV_SQRT_2PI)


def r_sigma(sigma: float, z):
    """Gaussian softplus ``E[(z - w)_+]`` for ``w ~ N(0, sigma^2)``.

    Closed form ``sigma * (u * Phi(u) + phi(u))`` with ``u = z / sigma``.
    It is evaluated as ``(z)_+ + sigma * h(|u|)`` with ``0 <= h <= 1/sqrt(2 pi)``,
    so the bounds ``(z)_+ <= r_sigma(z) <= sigma/sqrt(2 pi) + (z)_+`` hold
    in floating point, not only mathematically.
    """
    if not sigma > 0:
        raise ValidationError(f"sigma must be positive, got {sigma}")
    z = np.asarray(z, dtype=float)
    out = np.maximum(z, 0.0) + sigma * _gauss_softplus_excess(np.abs(z) / sigma)
    return out if out.ndim else float(out)


def smoothness_constant_Lprime(c: LossConstants, sigma: float, alpha) -> float:
    """Smoothness constant of the CV@R objective built on the smoothed surrogate.

    ``L' = (L sigma sqrt(2 pi) + G^2) / (alpha sigma sqrt(2 pi))``.
    """
    if not sigma > 0:
        raise ValidationError(f"sigma must be positive, got {sigma}")
    a = as_alpha(alpha)
    return (c.L_smooth * sigma * SQRT_2PI + c.G_lip ** 2) / (a * sigma * SQRT_2PI)


class LossModel(ABC):
    """Contract for pluggable losses.

    Subclasses implement the per-example ``value`` and ``grad_theta``; the
    batch versions fall back to Python loops unless overridden.
    """

    @abstractmethod
    def value(self, theta, x, y) -> float: ...

    @abstractmethod
    def grad_theta(self, theta, x, y) -> np.ndarray: ...

    @abstractmethod
    def constants(self) -> LossConstants: ...

    def values(self, theta, X, y) -> np.ndarray:
        return np.array([self.value(theta, xi, yi) for xi, yi in zip(X, y)])

    def grads(self, theta, X, y) -> np.ndarray:
        return np.stack([self.grad_theta(theta, xi, yi) for xi, yi in zip(X, y)])

    def value_and_grad(self, theta, x, y):
        return self.value(theta, x, y), self.grad_theta(theta, x, y)

    def example_value(self, theta, e: Example) -> float:
        return self.value(theta, e.x, e.y)

    def example_grad(self, theta, e: Example) -> np.ndarray:
        return self.grad_theta(theta, e.x, e.y)


def _check_dims(theta, x):
    if np.shape(theta)[-1] != np.shape(x)[-1]:
        raise DimensionError(f"theta has dimension {np.shape(theta)[-1]} but x has {np.shape(x)[-1]}")


class RidgeLoss(LossModel):
    """Ridge loss ``(y - <theta, x>)^2 + lam * ||theta||^2``.

    Parameters
    ----------
    lam : float
        Regularization weight, positive.
    x_sq_mean : float, optional
        Declared bound on ``E||x||^2``; sets ``L_smooth = 2 x_sq_mean + 2 lam``.
    G_lip : float, optional
        Declared Lipschitz constant, e.g. from :meth:`lipschitz_over_box`.
    """

    def __init__(self, lam: float, x_sq_mean: Optional[float] = None, G_lip: Optional[float] = None):
        if not (lam > 0 and math.isfinite(lam)):
            raise ValidationError(f"lambda must be positive, got {lam}")
        self.lam = float(lam)
        self.x_sq_mean = x_sq_mean
        self.G_lip = G_lip

    def __repr__(self):
        return f"RidgeLoss(lam={self.lam})"

    def value(self, theta, x, y):
        _check_dims(theta, x)
        r = y - float(np.dot(theta, x))
        return r * r + self.lam * float(np.dot(theta, theta))

    def grad_theta(self, theta, x, y):
        _check_dims(theta, x)
        theta = np.asarray(theta, dtype=float)
        return 2.0 * (float(np.dot(theta, x)) - y) * np.asarray(x, dtype=float) + 2.0 * self.lam * theta

    def value_and_grad(self, theta, x, y):
        _check_dims(theta, x)
        theta = np.asarray(theta, dtype=float)
        e = float(np.dot(theta, x)) - y
        reg = float(np.dot(theta, theta))
        return e * e + self.lam * reg, 2.0 * e * np.asarray(x, dtype=float) + 2.0 * self.lam * theta

    def values(self, theta, X, y):
        _check_dims(theta, X)
        r = np.asarray(y) - np.asarray(X) @ theta
        return r * r + self.lam * float(np.dot(theta, theta))

    def grads(self, theta, X, y):
        _check_dims(theta, X)
        e = np.asarray(X) @ theta - np.asarray(y)
        return 2.0 * e[:, None] * np.asarray(X) + 2.0 * self.lam * np.asarray(theta)[None, :]

    def lipschitz_over_box(self, theta_radius: float, x_max_norm: float, y_max: float) -> float:
        """Lipschitz constant of the loss over ``||theta|| <= theta_radius``.

        With ``||x|| <= x_max_norm`` and ``|y| <= y_max`` the gradient norm is at
        most ``2 (theta_radius x_max_norm + y_max) x_max_norm + 2 lam theta_radius``.
        """
        return 2.0 * (theta_radius * x_max_norm + y_max) * x_max_norm + 2.0 * self.lam * theta_radius

    def constants(self) -> LossConstants:
        if self.x_sq_mean is None:
            raise ValueError("RidgeLoss.constants() needs the declared input bound x_sq_mean")
        return LossConstants(
            mu=2.0 * self.lam,
            L_smooth=2.0 * self.x_sq_mean + 2.0 * self.lam,
            G_lip=0.0 if self.G_lip is None else self.G_lip,
            l_floor=0.0,
        )

    def minimize_mean(self, X, y) -> np.ndarray:
        """Closed-form minimizer of the mean ridge loss over the rows of ``X``."""
        X = np.asarray(X, dtype=float)
        n, m = X.shape
        A = X.T @ X / n + self.lam * np.eye(m)
        return np.linalg.solve(A, X.T @ np.asarray(y, dtype=float) / n)


def ridge_value(lam: float, theta, e: Example) -> float:
    return RidgeLoss(lam).value(theta, e.x, e.y)


def ridge_grad(lam: float, theta, e: Example) -> np.ndarray:
    return RidgeLoss(lam).grad_theta(theta, e.x, e.y)


class SmoothedSurrogate:
    """Surrogate loss ``inner(theta; x, y) - w`` for a fictitious target ``w ~ N(0, sigma^2)``.

    The ``w`` term has no theta-dependence, so gradients are the inner ones.
    """

    def __init__(self, inner: LossModel, sigma: float):
        if not (sigma > 0 and math.isfinite(sigma)):
            raise ValidationError(f"sigma must be positive, got {sigma}")
        self.inner = inner
        self.sigma = float(sigma)

    def __repr__(self):
        return f"SmoothedSurrogate({self.inner!r}, sigma={self.sigma})"

    def value(self, theta, x, y, w) -> float:
        return self.inner.value(theta, x, y) - w

    def grad_theta(self, theta, x, y, w=0.0) -> np.ndarray:
        return self.inner.grad_theta(theta, x, y)

    def values(self, theta, X, y, w) -> np.ndarray:
        return self.inner.values(theta, X, y) - np.asarray(w)

    def smoothness_constant(self, alpha) -> float:
        return smoothness_constant_Lprime(self.inner.constants(), self.sigma, alpha)


def surrogate_value(s: SmoothedSurrogate, theta, ae: AugmentedExample) -> float:
    return s.value(theta, ae.x, ae.y, ae.w)
