"""CSV and JSON artifacts written by the command-line harness.

Every file starts with (CSV) or contains (JSON) the fully resolved config, so
an artifact is enough to reproduce itself. Floats are written with ``repr``,
which round-trips exactly and makes reruns byte-identical.
"""
from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .core import Trace


def _fmt(v) -> str:
    v = float(v)
    return "" if math.isnan(v) else repr(v)


def _header_lines(config_json: str, meta: dict = None) -> List[str]:
    lines = [f"# config: {config_json}"]
    if meta:
        lines.append(f"# run: {json.dumps(meta, sort_keys=True)}")
    return lines


def trace_header(m: int) -> str:
    return ",".join(["iter", "t"] + [f"theta_{j}" for j in range(m)]
                    + ["in_event", "loss_sample", "g_alpha_est"])


def write_trace_csv(path, trace: Trace, config_json: str, meta: dict = None) -> None:
    """Schema: ``iter,t,theta_0..theta_{m-1},in_event,loss_sample,g_alpha_est``.

    ``g_alpha_est`` is empty where no estimate was taken; ``loss_sample`` is
    empty on row 0.
    """
    m = trace.theta.shape[1]
    out = _header_lines(config_json, meta) + [trace_header(m)]
    for n in range(len(trace)):
        row = [str(n), _fmt(trace.t[n])] + [_fmt(v) for v in trace.theta[n]]
        row += ["1" if trace.in_event[n] else "0", _fmt(trace.loss_sample[n]), _fmt(trace.g_alpha_est[n])]
        out.append(",".join(row))
    Path(path).write_text("\n".join(out) + "\n")


def _read_table(path) -> Tuple[List[str], List[str], List[List[str]]]:
    text = Path(path).read_text()
    comments, body = [], []
    for line in text.splitlines():
        if line.startswith("#"):
            comments.append(line)
        elif line.strip():
            body.append(line)
    if not body:
        raise ValueError(f"{path}: no header")
    header = body[0].split(",")
    rows = [r.split(",") for r in body[1:]]
    for r in rows:
        if len(r) != len(header):
            raise ValueError(f"{path}: ragged row")
    return comments, header, rows


def comment_meta(comments: Sequence[str]) -> Dict[str, dict]:
    """Parse ``# key: {json}`` comment lines."""
    out = {}
    for c in comments:
        key, _, rest = c[1:].strip().partition(":")
        try:
            out[key.strip()] = json.loads(rest)
        except json.JSONDecodeError:
            pass
    return out


def read_trace_csv(path) -> Tuple[Trace, Dict[str, dict]]:
    comments, header, rows = _read_table(path)
    m = sum(h.startswith("theta_") for h in header)
    if header != trace_header(m).split(","):
        raise ValueError(f"{path}: unexpected trace header")
    if not rows:
        raise ValueError(f"{path}: empty trace")
    num = lambda s: float(s) if s else math.nan  # noqa: E731
    A = np.array([[num(v) for v in r] for r in rows], dtype=float)
    if not np.array_equal(A[:, 0], np.arange(len(rows))):
        raise ValueError(f"{path}: iter column must count up from 0")
    trace = Trace(A[:, 2:2 + m], A[:, 1], A[:, 2 + m] == 1.0, A[:, 3 + m], A[:, 4 + m])
    return trace, comment_meta(comments)


def write_matrix_csv(path, header: Sequence[str], columns: Sequence[np.ndarray], config_json: str,
                     meta: dict = None, index_name: str = "iter") -> None:
    n = len(columns[0])
    out = _header_lines(config_json, meta) + [",".join([index_name] + list(header))]
    for i in range(n):
        out.append(",".join([str(i)] + [_fmt(c[i]) for c in columns]))
    Path(path).write_text("\n".join(out) + "\n")


def read_lms_csv(path) -> np.ndarray:
    _, header, rows = _read_table(path)
    if not rows:
        raise ValueError(f"{path}: empty LMS path")
    return np.array([[float(v) for v in r[1:]] for r in rows], dtype=float)


def _clean(obj):
    # JSON has no NaN or infinity; absent values become null
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n")
