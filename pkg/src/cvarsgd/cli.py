"""Command-line harness: ``run``, ``diagnose`` and ``cvar``.

Exit codes: 0 success, 1 config or usage error, 2 runtime failure or
divergence, 3 I/O failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import experiment as ex
from .artifacts import read_lms_csv, read_trace_csv, write_json, write_matrix_csv, write_trace_csv
from .config import ConfigError, ExperimentConfig, load_config
from .core import ValidationError
from .objective import cvar_sorted, cvar_variational
from .optimizer import DivergenceError, IncompleteRunError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # usage problems share the config-error exit code instead of argparse's 2
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _alpha(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0.0 < v <= 1.0:
        raise argparse.ArgumentTypeError("alpha must lie in (0, 1]")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cvarsgd", description="CV@R learning by stochastic gradient descent.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="INI config file (defaults reproduce the ridge experiment)")
        sp.add_argument("--seed", type=_u64, help="override stream.seed")
        sp.add_argument("--out", help="output directory (overrides experiment.output_dir)")
        sp.add_argument("--quiet", action="store_true", help="no progress output")

    common(sub.add_parser("run", help="run CV@R-SGD and LMS over all seeds"))
    d = sub.add_parser("diagnose", help="check PL, lemma and bound conditions on finished traces")
    common(d)
    d.add_argument("--inline", action="store_true", help="produce the traces instead of reading them")
    c = sub.add_parser("cvar", help="CV@R of a file of samples, by sorting and by the variational form")
    c.add_argument("samples_file")
    c.add_argument("--alpha", type=_alpha, required=True)
    return p


def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.out:
        cfg = replace(cfg, output_dir=args.out)
    return cfg


def _say(args, msg):
    if not args.quiet:
        print(msg, file=sys.stderr)


def trace_path(out: Path, i: int) -> Path:
    return out / f"trace_seed{i}.csv"


def lms_path(out: Path, i: int) -> Path:
    return out / f"lms_seed{i}.csv"


def _run_meta(cfg, i):
    return {"seed_index": i, "stream_seed": ex.train_spec(cfg, i).seed}


def write_run_files(cfg: ExperimentConfig, result: ex.ExperimentResult, out: Path) -> None:
    cj = cfg.to_json()
    m = cfg.stream.dim_d
    for r in result.runs:
        write_trace_csv(trace_path(out, r.index), r.trace, cj, _run_meta(cfg, r.index))
        write_matrix_csv(lms_path(out, r.index), [f"theta_{j}" for j in range(m)], list(r.lms.T), cj,
                         _run_meta(cfg, r.index))
    names = ["cvar_sgd_sq_error", "cvar_sgd_ridge_loss", "lms_sq_error", "lms_ridge_loss"]
    ec, el = result.test_errors_cvar, result.test_errors_lms
    write_matrix_csv(out / "test_error_samples.csv", names,
                     [ec["sq_error"], ec["ridge_loss"], el["sq_error"], el["ridge_loss"]], cj,
                     _run_meta(cfg, result.runs[0].index), index_name="index")
    seq = sequential_errors(cfg, result.runs[0])
    write_matrix_csv(out / "test_error_sequential.csv", names, seq, cj, _run_meta(cfg, result.runs[0].index))
    write_json(out / "summary.json", ex.summary(result))


def sequential_errors(cfg: ExperimentConfig, run: ex.SeedRun):
    """Prequential errors: iterate ``n`` scored on fresh sequential example ``n``."""
    loss = cfg.build_loss()
    n = min(len(run.trace), cfg.sequential_n)
    b = ex.sequential_test_set(cfg, n)
    cols = []
    for thetas in (run.trace.theta[:n], run.lms[:n]):
        r = b.y - np.einsum("ij,ij->i", b.X, thetas)
        sq = r * r
        cols += [sq, sq + loss.lam * np.einsum("ij,ij->i", thetas, thetas)]
    return cols


def cmd_run(args) -> int:
    cfg = resolve_config(args)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    loss = cfg.build_loss()
    runs = []
    for i in range(cfg.n_seeds):
        try:
            runs.append(ex.run_seed(cfg, i, loss))
        except (DivergenceError, IncompleteRunError) as exc:
            write_trace_csv(trace_path(out, i), exc.trace, cfg.to_json(), _run_meta(cfg, i))
            print(f"seed {i}: {exc}; partial trace written to {trace_path(out, i)}", file=sys.stderr)
            return EXIT_RUNTIME
        _say(args, f"seed {i + 1}/{cfg.n_seeds} done")
    _say(args, "computing reference solution and test errors")
    result = ex.analyse(cfg, runs)
    write_run_files(cfg, result, out)
    s = result.rate
    _say(args, f"final mean gap {result.mean_gap[-1]:.6g}; rho {s['rho']}; floor {s['floor']}")
    return EXIT_OK


def load_runs(cfg: ExperimentConfig, out: Path):
    runs = []
    want = json.loads(cfg.to_json())
    for i in range(cfg.n_seeds):
        p = trace_path(out, i)
        if not p.exists():
            raise FileNotFoundError(f"missing trace {p}; run `cvarsgd run` first or pass --inline")
        trace, meta = read_trace_csv(p)
        if meta.get("config") != want:
            raise ConfigError(f"{p} was produced by a different config")
        runs.append(ex.SeedRun(i, meta["run"]["stream_seed"], trace, read_lms_csv(lms_path(out, i))))
    return runs


def cmd_diagnose(args) -> int:
    cfg = resolve_config(args)
    if not cfg.diagnostics.enabled:
        raise ConfigError("diagnostics are disabled in this config")
    out = Path(cfg.output_dir)
    if args.inline:
        out.mkdir(parents=True, exist_ok=True)
        loss = cfg.build_loss()
        runs = [ex.run_seed(cfg, i, loss) for i in range(cfg.n_seeds)]
    else:
        runs = load_runs(cfg, out)
    _say(args, "computing reference solution")
    pop = ex.population(cfg)
    result = ex.analyse(cfg, runs, pop)
    if args.inline:
        write_run_files(cfg, result, out)
    _say(args, "running checks")
    report = ex.diagnose(result, pop)
    write_json(out / "report.json", report)
    _say(args, f"PL violations {report['set_restricted_pl']['n_violations']}; "
               f"lemma violations {report['lemma1']['n_violations']}; "
               f"bound holds {report['theorem1']['all_below']}")
    return EXIT_OK


def read_samples(path) -> np.ndarray:
    vals = []
    for k, line in enumerate(Path(path).read_text().splitlines(), 1):
        s = line.strip()
        if not s:
            continue
        try:
            vals.append(float(s))
        except ValueError:
            raise ValueError(f"{path}:{k}: not a number: {s!r}") from None
    if not vals:
        raise ValueError(f"{path}: no samples")
    return np.asarray(vals)


def cmd_cvar(args) -> int:
    try:
        z = read_samples(args.samples_file)
    except (OSError, ValueError) as exc:
        print(f"cvarsgd cvar: {exc}", file=sys.stderr)
        return EXIT_IO
    a = cvar_sorted(z, args.alpha)
    b, t = cvar_variational(z, args.alpha)
    print(f"cvar_sorted {a!r}")
    print(f"cvar_variational {b!r}")
    print(f"difference {a - b!r}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = {"run": cmd_run, "diagnose": cmd_diagnose, "cvar": cmd_cvar}[args.command]
    try:
        return handler(args)
    except (ConfigError, ValidationError) as exc:
        print(f"cvarsgd {args.command}: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"cvarsgd {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO
    except (DivergenceError, IncompleteRunError, ArithmeticError, RuntimeError) as exc:
        print(f"cvarsgd {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except ValueError as exc:
        # malformed artifacts read back from disk
        print(f"cvarsgd {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO
