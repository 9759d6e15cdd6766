"""The streaming ridge experiment: CV@R-SGD against LMS over many seeds.

Every random quantity comes from its own derived stream: training and
evaluation streams per seed, plus one fixed population for reference values
and one test set, all keyed off ``config.stream.seed``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional

import numpy as np

from .config import ExperimentConfig
from .core import Batch, LossConstants, ParamState, Trace
from .datagen import ExampleSource, derive_seed, materialize_population
from .diagnostics import (
    NoiseFloorError, ReferenceSolution, estimate_grad_bound, estimate_reference, fit_linear_rate,
    lemma1_check, set_restricted_pl_check, stepsize_admissibility, theorem1_bound,
)
from .losses import RidgeLoss, smoothness_constant_Lprime
from .objective import cvar_sorted, g_alpha_estimate
from .optimizer import run, run_lms


def train_spec(cfg: ExperimentConfig, i: int):
    return cfg.stream.with_seed(derive_seed(cfg.stream.seed, "train", i))


def eval_spec(cfg: ExperimentConfig, i: int):
    return cfg.stream.with_seed(derive_seed(cfg.stream.seed, "eval", i))


def population(cfg: ExperimentConfig) -> Batch:
    return materialize_population(cfg.stream.with_seed(derive_seed(cfg.stream.seed, "population")),
                                  cfg.population_n)


def test_set(cfg: ExperimentConfig, n: Optional[int] = None) -> Batch:
    return materialize_population(cfg.stream.with_seed(derive_seed(cfg.stream.seed, "test")),
                                  cfg.test_n if n is None else n)


def sequential_test_set(cfg: ExperimentConfig, n: int) -> Batch:
    return materialize_population(cfg.stream.with_seed(derive_seed(cfg.stream.seed, "sequential")), n)


@dataclass
class SeedRun:
    index: int
    stream_seed: int
    trace: Trace
    lms: np.ndarray


def run_seed(cfg: ExperimentConfig, i: int, loss=None) -> SeedRun:
    """CV@R-SGD and LMS on the same training stream of seed ``i``."""
    loss = cfg.build_loss() if loss is None else loss
    spec = train_spec(cfg, i)
    sgd = cfg.sgd
    sgd = replace(sgd, seed=spec.seed)
    trace = run(sgd, loss, ExampleSource(spec), ExampleSource(eval_spec(cfg, i)))
    theta0 = sgd.initial_state(spec.dim_d).theta
    lms = run_lms(theta0, loss, ExampleSource(spec), cfg.baseline_beta, sgd.horizon_T)
    return SeedRun(i, spec.seed, trace, lms)


def population_gaps(trace: Trace, loss, pop: Batch, alpha: float, g_star: float, iters) -> np.ndarray:
    """``G(theta^n, t^n) - G*`` on the fixed population at the given iterations."""
    return np.array([g_alpha_estimate(trace.state(n), loss, pop, alpha).value - g_star for n in iters])


def test_errors(theta, loss: RidgeLoss, batch: Batch) -> Dict[str, np.ndarray]:
    r = batch.y - batch.X @ np.asarray(theta)
    sq = r * r
    return {"sq_error": sq, "ridge_loss": sq + loss.lam * float(np.dot(theta, theta))}


def error_stats(errors: Dict[str, np.ndarray], alpha: float) -> dict:
    out = {}
    for name, v in errors.items():
        out[name] = {"mean": float(np.mean(v)),
                     "mean_std_error": float(np.std(v, ddof=1) / math.sqrt(v.size)),
                     "cvar": cvar_sorted(v, alpha)}
    return out


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    runs: List[SeedRun]
    reference: ReferenceSolution
    checkpoints: np.ndarray
    gaps: np.ndarray            # (n_seeds, n_checkpoints)
    rate: dict
    test: dict
    test_errors_cvar: Dict[str, np.ndarray] = field(repr=False, default=None)
    test_errors_lms: Dict[str, np.ndarray] = field(repr=False, default=None)

    @property
    def mean_gap(self) -> np.ndarray:
        return self.gaps.mean(axis=0)


def checkpoints(cfg: ExperimentConfig, T: Optional[int] = None) -> np.ndarray:
    T = cfg.sgd.horizon_T if T is None else T
    return np.arange(0, T + 1, cfg.sgd.eval_cadence)


def analyse(cfg: ExperimentConfig, runs: List[SeedRun], pop: Optional[Batch] = None,
            reference: Optional[ReferenceSolution] = None) -> ExperimentResult:
    """Reference solution, population gaps, rate fit and test errors for finished runs."""
    loss = cfg.build_loss()
    alpha = cfg.sgd.alpha
    pop = population(cfg) if pop is None else pop
    if reference is None:
        reference = estimate_reference(loss, alpha, pop, min_population=min(10_000, len(pop)))
    T = len(runs[0].trace) - 1
    iters = checkpoints(cfg, T)
    gaps = np.stack([population_gaps(r.trace, loss, pop, alpha, reference.g_star, iters) for r in runs])
    mean_gap = gaps.mean(axis=0)
    try:
        rho, floor = fit_linear_rate(np.maximum(mean_gap, 0.0), burn_in=0, floor_quantile=0.5,
                                     spacing=cfg.sgd.eval_cadence)
        rate = {"rho": rho, "floor": floor, "spacing": cfg.sgd.eval_cadence, "error": None}
    except (NoiseFloorError, ValueError) as exc:
        rate = {"rho": None, "floor": None, "spacing": cfg.sgd.eval_cadence, "error": str(exc)}

    tests = test_set(cfg)
    first = runs[0]
    err_c = test_errors(first.trace.final_state.theta, loss, tests)
    err_l = test_errors(first.lms[-1], loss, tests)
    test = {"n": len(tests), "seed_index": first.index, "alpha": alpha,
            "cvar_sgd": error_stats(err_c, alpha), "lms": error_stats(err_l, alpha)}
    return ExperimentResult(cfg, runs, reference, iters, gaps, rate, test, err_c, err_l)


def run_experiment(cfg: ExperimentConfig, progress=None) -> ExperimentResult:
    loss = cfg.build_loss()
    runs = []
    for i in range(cfg.n_seeds):
        runs.append(run_seed(cfg, i, loss))
        if progress:
            progress(i)
    return analyse(cfg, runs)


def summary(result: ExperimentResult) -> dict:
    cfg = result.config
    return {
        "config": cfg.to_dict(),
        "reference": result.reference.to_dict(),
        "seeds": [{"index": r.index, "stream_seed": r.stream_seed,
                   "final_gap": float(result.gaps[k, -1]),
                   "final_theta": list(map(float, r.trace.final_state.theta)),
                   "final_t": float(r.trace.final_state.t),
                   "final_lms_theta": list(map(float, r.lms[-1]))}
                  for k, r in enumerate(result.runs)],
        "checkpoints": result.checkpoints.tolist(),
        "mean_gap": result.mean_gap.tolist(),
        "rate": result.rate,
        "test_error": result.test,
    }


# ------------------------------------------------------------- diagnostics

def sample_states(loss, pop: Batch, center: np.ndarray, n: int, min_event_mass: float, seed: int,
                  radius: float = 1.0, max_draws: int = 100_000) -> List[ParamState]:
    """Random states ``theta ~ center + U[-radius, radius]^m`` with ``t`` drawn between
    the 5% and 95% loss quantiles at ``theta``, kept when the event mass is large enough."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(max_draws):
        theta = center + rng.uniform(-radius, radius, center.shape[0])
        l = loss.values(theta, pop.X, pop.y)
        lo, hi = np.quantile(l, [0.05, 0.95])
        st = ParamState(theta, rng.uniform(lo, hi))
        if np.mean(l - st.t > 0) >= min_event_mass:
            out.append(st)
            if len(out) == n:
                break
    return out


def theorem_constants(cfg: ExperimentConfig, result: ExperimentResult, pop: Batch) -> dict:
    """Constants for the linear-rate bound, each tagged with where it came from."""
    loss = cfg.build_loss()
    alpha = cfg.sgd.alpha
    d = cfg.diagnostics
    base = loss.constants()
    theta_radius = max(float(np.max(np.linalg.norm(r.trace.theta, axis=1))) for r in result.runs)
    theta_radius = max(theta_radius, float(np.linalg.norm(result.reference.theta_star)))
    x_max_norm = math.sqrt(cfg.stream.dim_d) * max(abs(cfg.stream.x_low), abs(cfg.stream.x_high))
    y_max = float(np.max(np.abs(pop.y)))
    G = loss.lipschitz_over_box(theta_radius, x_max_norm, y_max)
    if d.L_source == "user":
        L = {"value": float(d.L_user), "provenance": "user-supplied diagnostics.L_user"}
    else:
        c = LossConstants(base.mu, base.L_smooth, G, base.l_floor)
        L = {"value": smoothness_constant_Lprime(c, d.L_sigma, alpha),
             "provenance": f"smoothed-objective constant L' with sigma={d.L_sigma}, loss L and G below"}
    ct2 = 0.0
    for r in result.runs:
        est = estimate_grad_bound(r.trace, loss, ExampleSource(eval_spec(cfg, r.index).with_seed(
            derive_seed(cfg.stream.seed, "gradbound", r.index))), d.grad_bound_batch,
            cadence=cfg.sgd.eval_cadence)
        ct2 = max(ct2, est.c_t_squared)
    init = cfg.sgd.initial_state(cfg.stream.dim_d)
    gap0 = g_alpha_estimate(init, loss, pop, alpha).value - result.reference.g_star
    return {
        "mu": {"value": base.mu, "provenance": "ridge strong convexity 2*lambda"},
        "L": L,
        "loss_L_smooth": {"value": base.L_smooth, "provenance": "2*E||x||^2 + 2*lambda from the declared uniform feature law"},
        "G_lip": {"value": G, "provenance": f"ridge Lipschitz bound over ||theta|| <= {theta_radius:.6g}, "
                                            f"||x|| <= {x_max_norm:.6g}, |y| <= {y_max:.6g}"},
        "C_T_squared": {"value": ct2, "provenance": "max over seeds and checkpoints of Monte Carlo E||grad_theta loss||^2"},
        "gap0": {"value": float(gap0), "provenance": "population G at the initial state minus g_star"},
        "g_star": {"value": result.reference.g_star, "provenance": f"reference solution ({result.reference.method})"},
        "t_star": {"value": result.reference.t_star, "provenance": "empirical-population t* (substituted for the population value)"},
        "l_floor": {"value": base.l_floor, "provenance": "ridge loss is nonnegative"},
    }


def diagnose(result: ExperimentResult, pop: Optional[Batch] = None) -> dict:
    cfg = result.config
    d = cfg.diagnostics
    loss = cfg.build_loss()
    alpha = cfg.sgd.alpha
    pop = population(cfg) if pop is None else pop
    ref = result.reference
    consts = theorem_constants(cfg, result, pop)
    mu = consts["mu"]["value"]

    states = sample_states(loss, pop, ref.theta_star, d.pl_states, d.min_event_mass, d.state_seed)
    pl_report, _ = set_restricted_pl_check(loss, states, mu, pop, d.min_event_mass)

    if alpha < 1.0:
        step = stepsize_admissibility(alpha, d.epsilon, cfg.sgd.steps.gamma, mu, ref.t_star,
                                      consts["l_floor"]["value"]).to_dict()
    else:
        step = {"ok": None, "lower": None, "upper": None, "feasible": None,
                "error": "window undefined at alpha = 1"}
    step["epsilon"] = d.epsilon
    step["gamma"] = cfg.sgd.steps.gamma

    first = result.runs[0].trace
    lemma = lemma1_check([first.state(n) for n in result.checkpoints], result.checkpoints, loss, alpha,
                         mu, pop, ref)

    exponents = np.maximum(result.checkpoints - 1, 0)
    bound = theorem1_bound(mu, consts["L"]["value"], cfg.sgd.steps, alpha, exponents,
                           max(consts["gap0"]["value"], 0.0), consts["C_T_squared"]["value"])
    bound = np.atleast_1d(bound)
    measured = result.mean_gap
    return {
        "config": cfg.to_dict(),
        "reference": ref.to_dict(),
        "constants": consts,
        "stepsize_admissibility": step,
        "set_restricted_pl": pl_report.to_dict(),
        "lemma1": {
            "n_checked": len(lemma),
            "n_condition_met": sum(p.condition for p in lemma),
            "n_violations": sum(not p.holds for p in lemma),
            "points": [{"iter": p.iter, "event_mass": p.event_mass, "condition": p.condition,
                        "lhs": p.lhs, "rhs": p.rhs, "std_error": p.std_error, "holds": p.holds}
                       for p in lemma],
        },
        "theorem1": {
            "iters": result.checkpoints.tolist(),
            "measured_mean_gap": measured.tolist(),
            "bound": bound.tolist(),
            "all_below": bool(np.all(measured <= bound)),
            "n_seeds": len(result.runs),
        },
        "rate": result.rate,
        "notes": [
            "t_star is the minimizer on the fixed empirical population, used in place of the unknown population value",
            "t_star and t_alpha_star are treated as the same quantity",
        ],
    }
