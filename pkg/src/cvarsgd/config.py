"""Experiment configuration: INI sections mirroring the domain types.

Unknown sections or keys are errors; a mistyped stepsize must not silently
fall back to a default. Defaults reproduce the ridge experiment
(d = m = 7, lambda = 0.1, alpha = 0.2, beta = 0.002, gamma = 0.001, LMS beta = 0.01).
"""
from __future__ import annotations

import configparser
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

from .core import ParamState, StepSizes, ValidationError
from .datagen import RIDGE_PAPER_THETA_O, StreamSpec
from .losses import RidgeLoss
from .optimizer import SgdConfig


class ConfigError(ValueError):
    pass


SCHEMA = {
    "stream": {"kind": str, "dim_d": int, "theta_o": "vector", "noise_std": float,
               "x_low": float, "x_high": float, "seed": int, "sigma_w": float},
    "loss": {"kind": str, "lambda": float},
    "sgd": {"alpha": float, "beta": float, "gamma": float, "horizon_T": int, "theta0": "vector",
            "t0": float, "sigma": float, "eval_cadence": int, "eval_batch": int},
    "experiment": {"baseline_beta": float, "n_seeds": int, "population_n": int, "test_n": int,
                   "sequential_n": int, "output_dir": str},
    "diagnostics": {"enabled": bool, "epsilon": float, "pl_states": int, "min_event_mass": float,
                    "L_source": str, "L_user": float, "L_sigma": float, "grad_bound_batch": int,
                    "state_seed": int},
}


@dataclass(frozen=True)
class LossSpec:
    kind: str = "ridge"
    lam: float = 0.1

    def build(self, stream: StreamSpec) -> RidgeLoss:
        if self.kind != "ridge":
            raise ConfigError(f"unknown loss kind {self.kind!r}")
        return RidgeLoss(self.lam, x_sq_mean=stream.x_sq_mean)


@dataclass(frozen=True)
class DiagnosticsSpec:
    enabled: bool = True
    epsilon: float = 0.004
    pl_states: int = 50
    min_event_mass: float = 0.05
    L_source: str = "smoothed"
    L_user: Optional[float] = None
    L_sigma: float = 1.0
    grad_bound_batch: int = 10_000
    state_seed: int = 0


@dataclass(frozen=True)
class ExperimentConfig:
    stream: StreamSpec = field(default_factory=StreamSpec)
    loss: LossSpec = field(default_factory=LossSpec)
    sgd: SgdConfig = field(default_factory=lambda: SgdConfig(0.2, StepSizes(0.002, 0.001), 20_000))
    baseline_beta: float = 0.01
    n_seeds: int = 20
    population_n: int = 100_000
    test_n: int = 100_000
    sequential_n: int = 2_000
    output_dir: str = "out"
    diagnostics: DiagnosticsSpec = field(default_factory=DiagnosticsSpec)

    def __post_init__(self):
        if self.baseline_beta <= 0:
            raise ConfigError("baseline_beta must be positive")
        if self.n_seeds < 1:
            raise ConfigError("n_seeds must be positive")
        if self.diagnostics.enabled and self.population_n < 1000:
            raise ConfigError("population_n must be at least 1000 when diagnostics are enabled")
        if self.sgd.sigma != self.stream.sigma_w:
            raise ConfigError(f"sgd.sigma={self.sgd.sigma} must equal stream.sigma_w={self.stream.sigma_w}; "
                              "the stream supplies the fictitious targets")
        if self.diagnostics.L_source not in ("smoothed", "user"):
            raise ConfigError("diagnostics.L_source must be 'smoothed' or 'user'")
        if self.diagnostics.L_source == "user" and not (self.diagnostics.L_user or 0) > 0:
            raise ConfigError("diagnostics.L_user must be a positive number when L_source = user")

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, stream=self.stream.with_seed(seed))

    def build_loss(self) -> RidgeLoss:
        return self.loss.build(self.stream)

    def to_dict(self) -> dict:
        s = self.sgd
        init = s.init
        d = self.diagnostics
        return {
            "stream": self.stream.to_dict(),
            "loss": {"kind": self.loss.kind, "lambda": self.loss.lam},
            "sgd": {"alpha": s.alpha, "beta": s.steps.beta, "gamma": s.steps.gamma,
                    "horizon_T": s.horizon_T,
                    "theta0": None if init is None else list(map(float, init.theta)),
                    "t0": 0.0 if init is None else init.t, "sigma": s.sigma,
                    "eval_cadence": s.eval_cadence, "eval_batch": s.eval_batch},
            "experiment": {"baseline_beta": self.baseline_beta, "n_seeds": self.n_seeds,
                           "population_n": self.population_n, "test_n": self.test_n,
                           "sequential_n": self.sequential_n, "output_dir": self.output_dir},
            "diagnostics": {"enabled": d.enabled, "epsilon": d.epsilon, "pl_states": d.pl_states,
                            "min_event_mass": d.min_event_mass, "L_source": d.L_source,
                            "L_user": d.L_user, "L_sigma": d.L_sigma,
                            "grad_bound_batch": d.grad_bound_batch, "state_seed": d.state_seed},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _convert(section, key, kind, raw):
    try:
        if kind == "vector":
            return tuple(float(v) for v in raw.replace(",", " ").split())
        if kind is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind is int:
            return int(float(raw)) if "e" in raw.lower() else int(raw)
        return kind(raw.strip())
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r}") from None


def parse_config(text: str) -> ExperimentConfig:
    """Build an ExperimentConfig from INI text; absent keys keep their defaults."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    values = {}
    for section in cp.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in cp.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            values[(section, key)] = _convert(section, key, SCHEMA[section][key], raw)
    return build_config(values)


def build_config(values: dict) -> ExperimentConfig:
    g = lambda sec, key, default: values.get((sec, key), default)  # noqa: E731
    try:
        kind = g("stream", "kind", "ridge_paper")
        dim = g("stream", "dim_d", 7)
        theta_o = g("stream", "theta_o", RIDGE_PAPER_THETA_O if dim == 7 else None)
        if theta_o is None:
            raise ConfigError("stream.theta_o is required when dim_d != 7")
        stream = StreamSpec(kind=kind, dim_d=dim, theta_o=theta_o,
                            noise_std=g("stream", "noise_std", 0.0), x_low=g("stream", "x_low", 0.0),
                            x_high=g("stream", "x_high", 2.0), seed=g("stream", "seed", 0),
                            sigma_w=g("stream", "sigma_w", 0.0))
        loss = LossSpec(g("loss", "kind", "ridge"), g("loss", "lambda", 0.1))
        loss.build(stream)
        theta0 = g("sgd", "theta0", None)
        t0 = g("sgd", "t0", 0.0)
        init = None
        if theta0 is not None or ("sgd", "t0") in values:
            init = ParamState(theta0 if theta0 is not None else [0.0] * dim, t0)
        sgd = SgdConfig(alpha=g("sgd", "alpha", 0.2),
                        steps=StepSizes(g("sgd", "beta", 0.002), g("sgd", "gamma", 0.001)),
                        horizon_T=g("sgd", "horizon_T", 20_000), init=init,
                        sigma=g("sgd", "sigma", 0.0), eval_cadence=g("sgd", "eval_cadence", 100),
                        eval_batch=g("sgd", "eval_batch", 10_000))
        diag = DiagnosticsSpec(
            enabled=g("diagnostics", "enabled", True), epsilon=g("diagnostics", "epsilon", 0.004),
            pl_states=g("diagnostics", "pl_states", 50),
            min_event_mass=g("diagnostics", "min_event_mass", 0.05),
            L_source=g("diagnostics", "L_source", "smoothed"), L_user=g("diagnostics", "L_user", None),
            L_sigma=g("diagnostics", "L_sigma", 1.0),
            grad_bound_batch=g("diagnostics", "grad_bound_batch", 10_000),
            state_seed=g("diagnostics", "state_seed", 0))
        return ExperimentConfig(
            stream=stream, loss=loss, sgd=sgd,
            baseline_beta=g("experiment", "baseline_beta", 0.01), n_seeds=g("experiment", "n_seeds", 20),
            population_n=g("experiment", "population_n", 100_000),
            test_n=g("experiment", "test_n", 100_000),
            sequential_n=g("experiment", "sequential_n", 2_000),
            output_dir=g("experiment", "output_dir", "out"), diagnostics=diag)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())
