"""Empirical checks of PL-type conditions, stepsize windows and the linear-rate bound.

All conditional expectations are taken over one fixed population (an
empirical measure), so every inequality is checked with the same event
masses and the same optimal value on both sides.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from .core import Batch, BatchLike, ParamState, StepSizes, Trace, ValidationError, as_alpha, as_batch
from .losses import LossModel, SmoothedSurrogate
from .objective import batch_losses, cvar_sorted, smoothed_g_estimate, smoothed_grad_g

MIN_POPULATION = 10_000
SLACK_SE = 3.0


class ConvergenceError(RuntimeError):
    """A reference minimization stopped short; carries the last iterate."""

    def __init__(self, message, last_iterate=None, grad_norm=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.grad_norm = grad_norm


@dataclass(frozen=True)
class PlReport:
    mu_tested: float
    n_points: int
    n_violations: int
    worst_margin: float
    n_skipped: int = 0
    margins: tuple = ()

    def to_dict(self) -> dict:
        return {
            "mu_tested": self.mu_tested, "n_points": self.n_points,
            "n_violations": self.n_violations, "n_skipped": self.n_skipped,
            "worst_margin": self.worst_margin,
        }


@dataclass(frozen=True)
class ReferenceSolution:
    theta_star: np.ndarray
    t_star: float
    g_star: float
    method: str
    n_samples: int
    grad_norm: float = 0.0
    quantile_check: float = 0.0

    def to_dict(self) -> dict:
        return {
            "theta_star": list(map(float, self.theta_star)), "t_star": self.t_star,
            "g_star": self.g_star, "method": self.method, "n_samples": self.n_samples,
            "grad_norm": self.grad_norm, "quantile_check": self.quantile_check,
        }


@dataclass(frozen=True)
class GradBoundEstimate:
    c_t_squared: float
    iters: tuple = ()
    values: tuple = ()


@dataclass(frozen=True)
class StepsizeReport:
    ok: bool
    lower: float
    upper: float
    feasible: bool

    def to_dict(self) -> dict:
        return {"ok": self.ok, "lower": self.lower, "upper": self.upper, "feasible": self.feasible}


# ----------------------------------------------------------------- PL checks

def pl_check(fn: Callable, points: Sequence, mu: float, f_star: float) -> PlReport:
    """Count points violating ``0.5 ||grad||^2 >= mu (f - f_star)``.

    ``fn(x)`` returns ``(value, gradient)``. A point violates when the left side
    falls short by more than ``1e-10`` (scaled by the right side when it is
    larger than one).
    """
    if not mu > 0:
        raise ValidationError("mu must be positive")
    margins = []
    n_viol = 0
    for x in points:
        f, g = fn(np.asarray(x, dtype=float))
        if f_star > f + 1e-12 * max(1.0, abs(f)):
            raise ValueError(f"f_star={f_star} exceeds the function value {f}; bad infimum")
        lhs = 0.5 * float(np.dot(g, g))
        rhs = mu * (f - f_star)
        margins.append(lhs - rhs)
        if lhs < rhs - 1e-10 * max(1.0, abs(rhs)):
            n_viol += 1
    worst = min(margins) if margins else math.inf
    return PlReport(mu, len(margins), n_viol, worst, 0, tuple(margins))


def restricted_infimum(loss: LossModel, X, y, theta0, grad_tol: float = 1e-8,
                       max_iter: int = 100_000) -> tuple:
    """Minimize the mean loss over the rows of ``X`` by gradient descent.

    The step is backtracked until it is below the inverse of the local
    gradient Lipschitz estimate ``||g(new) - g(old)|| / ||new - old||``; this
    test stays meaningful near the optimum, where value differences sink
    below rounding. Returns ``(theta, value, grad_norm)``.
    """
    theta = np.array(theta0, dtype=float)
    g = loss.grads(theta, X, y).mean(axis=0)
    gn = float(np.linalg.norm(g))
    step = 1.0
    for _ in range(max_iter):
        if gn <= grad_tol:
            break
        while True:
            cand = theta - step * g
            gc = loss.grads(cand, X, y).mean(axis=0)
            if float(np.linalg.norm(gc - g)) <= 0.99 * gn or step < 1e-20:
                break
            step *= 0.5
        if step < 1e-20:
            break
        theta, g = cand, gc
        gn = float(np.linalg.norm(g))
        step *= 1.25
    if gn > grad_tol:
        raise ConvergenceError(f"restricted descent stopped at gradient norm {gn:.3g}", theta, gn)
    return theta, float(np.mean(loss.values(theta, X, y))), gn


@dataclass(frozen=True)
class RestrictedPlPoint:
    state: ParamState
    event_mass: float
    skipped: bool
    lhs: float = math.nan
    rhs: float = math.nan
    std_error: float = math.nan
    l_star: float = math.nan
    violated: bool = False


def set_restricted_pl_check(loss: LossModel, state_grid: Sequence[ParamState], mu: float,
                            population: BatchLike, min_event_mass: float = 0.05,
                            grad_tol: float = 1e-8, cross_check: bool = True):
    """Check the event-restricted PL inequality at each state of ``state_grid``.

    At state ``(theta, t)`` the population is conditioned on the event
    ``{loss - t > 0}``. States whose event mass is below ``min_event_mass`` are
    skipped. Otherwise ``0.5 ||E[grad | event]||^2`` is compared with
    ``mu (E[loss | event] - l*)``, where ``l*`` minimizes the conditional mean
    loss over theta. A violation needs a shortfall beyond three combined
    standard errors.

    Returns
    -------
    report : PlReport
    points : list of RestrictedPlPoint
    """
    pop = as_batch(population)
    if len(pop) == 0:
        raise ValueError("empty population")
    if not mu > 0:
        raise ValidationError("mu must be positive")
    points: List[RestrictedPlPoint] = []
    for st in state_grid:
        l = batch_losses(st, loss, pop)
        mask = l - st.t > 0
        mass = float(np.mean(mask))
        if mass < min_event_mass or not mask.any():
            points.append(RestrictedPlPoint(st, mass, True))
            continue
        Xs, ys, ls = pop.X[mask], pop.y[mask], l[mask]
        k = ls.shape[0]
        G = loss.grads(st.theta, Xs, ys)
        gbar = G.mean(axis=0)
        lhs = 0.5 * float(np.dot(gbar, gbar))
        _, l_star, _ = restricted_infimum(loss, Xs, ys, st.theta, grad_tol=grad_tol)
        if cross_check and hasattr(loss, "minimize_mean"):
            closed = float(np.mean(loss.values(loss.minimize_mean(Xs, ys), Xs, ys)))
            if abs(closed - l_star) > 1e-8 * max(1.0, abs(closed)):
                raise ConvergenceError(f"restricted infimum {l_star} disagrees with closed form {closed}")
            l_star = min(l_star, closed)
        rhs = mu * (float(np.mean(ls)) - l_star)
        if k > 1:
            se_l = float(np.std(ls, ddof=1)) / math.sqrt(k)
            se_lhs = math.sqrt(max(float(gbar @ np.cov(G, rowvar=False, ddof=1) @ gbar), 0.0) / k)
        else:
            se_l = se_lhs = 0.0
        se = math.hypot(se_lhs, mu * se_l)
        points.append(RestrictedPlPoint(st, mass, False, lhs, rhs, se, l_star,
                                        lhs < rhs - SLACK_SE * se))
    checked = [p for p in points if not p.skipped]
    margins = tuple(p.lhs - p.rhs for p in checked)
    report = PlReport(mu, len(checked), sum(p.violated for p in checked),
                      min(margins) if margins else math.inf, len(points) - len(checked), margins)
    return report, points


# ------------------------------------------------------- reference solution

def _smoothed_stage(loss, alpha, pop, z0, sigma, max_iter):
    s = SmoothedSurrogate(loss, sigma)

    def fg(z):
        st = ParamState.from_vector(z)
        return smoothed_g_estimate(st, s, pop, alpha).value, smoothed_grad_g(st, s, pop, alpha)

    res = minimize(fg, z0, jac=True, method="L-BFGS-B",
                   options=dict(maxiter=max_iter, gtol=1e-12, ftol=1e-16, maxcor=20))
    return res.x, float(np.linalg.norm(res.jac)), res.nit


def estimate_reference(loss: LossModel, alpha, population: BatchLike, init: Optional[ParamState] = None,
                       grad_tol: float = 1e-6, value_tol: float = 1e-10, max_iter: int = 100_000,
                       min_population: int = MIN_POPULATION) -> ReferenceSolution:
    """Minimize the empirical joint objective over ``(theta, t)``.

    For ``alpha < 1`` the empirical objective is piecewise smooth in ``t``,
    so it is minimized through Gaussian smoothing with a decreasing
    bandwidth (L-BFGS, warm-started at each level). The returned ``t_star`` is
    the exact minimizing tail quantile of the loss at ``theta_star`` and
    ``g_star`` the exact empirical CV@R there. For ``alpha = 1`` the mean loss
    is minimized directly and ``t_star`` is the smallest loss.
    """
    a = as_alpha(alpha)
    pop = as_batch(population)
    if len(pop) < min_population:
        raise ValidationError(f"population of {len(pop)} is below the minimum {min_population}")
    m = pop.dim
    init = ParamState.zeros(m) if init is None else init

    if a == 1.0:
        theta, _, gn = restricted_infimum(loss, pop.X, pop.y, init.theta, grad_tol=1e-8,
                                          max_iter=max_iter)
        l = loss.values(theta, pop.X, pop.y)
        return ReferenceSolution(theta, float(np.min(l)), float(np.mean(l)), "mean_descent", len(pop), gn, 0.0)

    z = init.as_vector()
    l0 = batch_losses(init, loss, pop)
    scale = float(np.std(l0)) or 1.0
    g_prev = math.inf
    gn, iters = math.inf, 0
    converged = False
    settled = 0
    for k in range(16):
        sigma = scale * 10.0 ** (-k)
        z, gn, nit = _smoothed_stage(loss, a, pop, z, sigma, max_iter)
        iters += nit
        g_exact = cvar_sorted(loss.values(z[:-1], pop.X, pop.y), a)
        # stop once shrinking the bandwidth no longer moves the exact CV@R.
        # On small populations the minimizer sits on a kink and the smoothed
        # gradient stops shrinking with sigma, so two settled stages in a row
        # also count as converged.
        settled = settled + 1 if abs(g_exact - g_prev) <= value_tol * (1.0 + abs(g_exact)) else 0
        if (settled and gn <= grad_tol) or settled >= 2:
            converged = True
            break
        g_prev = g_exact
        if iters >= max_iter:
            break
    if not converged:
        raise ConvergenceError(f"smoothed descent did not converge (gradient norm {gn:.3g})", z, gn)

    theta = z[:-1]
    l = loss.values(theta, pop.X, pop.y)
    n = l.shape[0]
    k_tail = min(n, max(1, math.ceil(a * n)))
    t_star = float(np.sort(l)[::-1][k_tail - 1])
    g_star = cvar_sorted(l, a)
    quantile_check = abs(float(z[-1]) - t_star)
    return ReferenceSolution(theta, t_star, g_star, "gaussian_smoothing_continuation", n, gn, quantile_check)


# ------------------------------------------------------- lemma-level checks

@dataclass(frozen=True)
class LemmaPoint:
    iter: int
    event_mass: float
    condition: bool
    lhs: float
    rhs: float
    std_error: float
    holds: bool


def objective_terms(state: ParamState, loss: LossModel, pop: Batch, alpha: float):
    """Empirical ``G``, its gradient, event mass and the standard errors of ``G`` and ``0.5||grad||^2``."""
    l = batch_losses(state, loss, pop)
    ind = l - state.t > 0
    n = l.shape[0]
    g_i = state.t + np.maximum(l - state.t, 0.0) / alpha
    V = np.zeros((n, state.dim + 1))
    if ind.any():
        V[ind, :-1] = loss.grads(state.theta, pop.X[ind], pop.y[ind]) / alpha
    V[:, -1] = 1.0 - ind / alpha
    vbar = V.mean(axis=0)
    se_g = float(np.std(g_i, ddof=1)) / math.sqrt(n)
    se_half_sq = math.sqrt(max(float(vbar @ np.cov(V, rowvar=False, ddof=1) @ vbar), 0.0) / n)
    return float(np.mean(g_i)), vbar, float(np.mean(ind)), se_g, se_half_sq


def lemma1_check(states: Sequence[ParamState], iters: Sequence[int], loss: LossModel, alpha,
                 mu: float, population: BatchLike, reference: ReferenceSolution) -> List[LemmaPoint]:
    """At states whose event mass exceeds ``alpha + 2 alpha mu (t* - t)_+``, check
    ``mu (G - G*) <= 0.5 ||grad G||^2`` up to three combined standard errors."""
    a = as_alpha(alpha)
    pop = as_batch(population)
    out = []
    for it, st in zip(iters, states):
        g, grad, mass, se_g, se_grad = objective_terms(st, loss, pop, a)
        cond = mass > a + 2.0 * a * mu * max(reference.t_star - st.t, 0.0)
        lhs = mu * (g - reference.g_star)
        rhs = 0.5 * float(np.dot(grad, grad))
        se = math.hypot(mu * se_g, se_grad)
        out.append(LemmaPoint(int(it), mass, cond, lhs, rhs, se, (not cond) or lhs <= rhs + SLACK_SE * se))
    return out


# --------------------------------------------------- stepsizes and the bound

def stepsize_admissibility(alpha, epsilon: float, gamma: float, mu: float, t_star: float,
                           l_floor: float) -> StepsizeReport:
    """Window ``alpha eps / (1 - alpha) <= gamma < eps / (2 mu (t* - l) + 1)``.

    Also reports whether ``t* - l < (1 - 2 alpha) / (2 alpha mu)``, the condition
    for the window to be nonempty.
    """
    a = as_alpha(alpha)
    if a == 1.0:
        raise ValidationError("stepsize window is undefined at alpha = 1")
    if not (epsilon > 0 and gamma > 0 and mu > 0):
        raise ValidationError("epsilon, gamma and mu must be positive")
    lower = a * epsilon / (1.0 - a)
    upper = epsilon / (2.0 * mu * (t_star - l_floor) + 1.0)
    feasible = (t_star - l_floor) < (1.0 - 2.0 * a) / (2.0 * a * mu)
    return StepsizeReport(bool(lower <= gamma < upper), lower, upper, bool(feasible))


def theorem1_bound(mu: float, L_smooth: float, steps: StepSizes, alpha, T, gap0: float,
                   c_t_squared: float):
    """Bound on the expected optimality gap after ``T`` iterations.

    ``(1 - 2 mu min(b, g))^T gap0 + max(b, g)^2 / min(b, g) * L (1 + C^2) / (4 alpha^2 mu)``.
    ``T`` may be an array.
    """
    a = as_alpha(alpha)
    lo, hi = min(steps.beta, steps.gamma), max(steps.beta, steps.gamma)
    if not 2.0 * mu * lo < 1.0:
        raise ValidationError(f"hypothesis 2 mu min(beta, gamma) < 1 fails: {2.0 * mu * lo}")
    if not (mu > 0 and L_smooth > 0):
        raise ValidationError("mu and L_smooth must be positive")
    T = np.asarray(T, dtype=float)
    out = np.exp(T * math.log1p(-2.0 * mu * lo)) * gap0 + hi * hi / lo * L_smooth * (1.0 + c_t_squared) / (
        4.0 * a * a * mu)
    return float(out) if out.ndim == 0 else out


# ------------------------------------------------------------ rate fitting

class NoiseFloorError(ValueError):
    pass


def fit_linear_rate(gaps, burn_in: int = 0, floor_quantile: float = 0.5, spacing: float = 1.0):
    """Fit ``gap_n ~ floor + C rho^n`` to a gap sequence.

    The floor is the ``floor_quantile`` quantile of the last 10% of gaps,
    unless that tail is itself still decaying (it shrinks by more than half
    across its span), in which case there is no visible floor and it is 0.
    ``rho`` is the exponentiated least-squares slope of
    ``log(gap - floor)`` from ``burn_in`` up to the first index where the gap
    reaches twice the floor. ``spacing`` is the number of iterations between
    consecutive entries, so ``rho`` is always per iteration.

    Returns
    -------
    rho, floor : float
    """
    g = np.asarray(gaps, dtype=float)
    if g.size <= burn_in + 10:
        raise ValueError("gap sequence too short for the requested burn-in")
    tail = g[-max(2, int(math.ceil(0.1 * g.size))):]
    floor = float(np.quantile(tail, floor_quantile))
    pos = tail > 0
    if pos.sum() >= 2:
        idx = np.flatnonzero(pos)
        slope = np.polyfit(idx, np.log(tail[pos]), 1)[0]
        if math.exp(slope * (tail.size - 1)) < 0.5:
            floor = 0.0
    seg = g[burn_in:]
    hit = np.flatnonzero(seg <= 2.0 * floor) if floor > 0 else np.array([], dtype=int)
    end = int(hit[0]) if hit.size else seg.size
    if end < 2:
        raise NoiseFloorError("already at noise floor")
    n = np.arange(end, dtype=float) * spacing
    logs = np.log(np.maximum(seg[:end] - floor, 1e-300))
    slope = np.polyfit(n, logs, 1)[0]
    return float(math.exp(slope)), floor


def estimate_grad_bound(trace: Trace, loss: LossModel, eval_source, batch: int,
                        cadence: Optional[int] = None) -> GradBoundEstimate:
    """Largest Monte Carlo estimate of ``E||grad_theta loss||^2`` over thinned trace states.

    States are taken every ``cadence`` iterations (default: where the trace
    holds objective estimates, else every state). ``eval_source`` is an
    ExampleSource or a callable ``n -> Batch``.
    """
    if len(trace) == 0:
        raise ValueError("empty trace")
    if cadence is not None:
        iters = np.arange(0, len(trace), cadence)
    else:
        iters = trace.eval_iters
        if iters.size == 0:
            iters = np.arange(len(trace))
    vals = []
    for n in iters:
        b = eval_source.take(batch) if hasattr(eval_source, "take") else eval_source(batch)
        G = loss.grads(trace.theta[n], b.X, b.y)
        vals.append(float(np.mean(np.einsum("ij,ij->i", G, G))))
    return GradBoundEstimate(max(vals), tuple(int(i) for i in iters), tuple(vals))
