"""CSV/JSON input-output and report formatting.

Trajectory CSVs carry the header ``t,x1,...,xD`` and 17-significant-digit
decimals so values round-trip exactly.  JSON reports embed the fully resolved
run configuration for provenance.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .odr import Model

__all__ = [
    "InputDataError",
    "format_float",
    "write_trajectory_csv",
    "read_trajectory_csv",
    "write_json",
    "format_equations",
]


class InputDataError(ValueError):
    """Structured error for rejected input files."""

    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


def format_float(value: float) -> str:
    return format(float(value), ".17g")


def write_trajectory_csv(path, times, X):
    times = np.asarray(times, dtype=float)
    X = np.asarray(X, dtype=float)
    header = "t," + ",".join(f"x{j + 1}" for j in range(X.shape[1]))
    lines = [header]
    for t, row in zip(times, X):
        lines.append(",".join([format_float(t)] + [format_float(v) for v in row]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_trajectory_csv(path, expected_dim: int | None = None):
    """Parse a trajectory CSV, validating header, finiteness and uniform sampling.

    Returns (times, X, dt).
    """
    try:
        text = Path(path).read_text().strip().splitlines()
    except OSError as exc:
        raise InputDataError("io", f"cannot read {path}: {exc}") from exc
    if not text:
        raise InputDataError("malformed_csv", f"{path}: empty file")
    header = text[0].strip().split(",")
    if header[0] != "t" or any(h != f"x{j + 1}" for j, h in enumerate(header[1:])):
        raise InputDataError("malformed_csv", f"{path}: header must be t,x1,...,xD, got {text[0]!r}")
    dim = len(header) - 1
    if dim < 1:
        raise InputDataError("malformed_csv", f"{path}: no state columns")
    if expected_dim is not None and dim != expected_dim:
        raise InputDataError(
            "dimension_mismatch",
            f"{path}: file has {dim} state columns, configuration expects {expected_dim}",
        )
    try:
        values = np.array([[float(v) for v in line.split(",")] for line in text[1:]])
    except ValueError as exc:
        raise InputDataError("malformed_csv", f"{path}: non-numeric entry ({exc})") from exc
    if values.ndim != 2 or values.shape[1] != dim + 1 or values.shape[0] < 2:
        raise InputDataError("malformed_csv", f"{path}: inconsistent row shape")
    if not np.all(np.isfinite(values)):
        raise InputDataError("non_finite_data", f"{path}: NaN or infinite entries")
    times, X = values[:, 0], values[:, 1:]
    steps = np.diff(times)
    dt = float(steps[0])
    if dt <= 0 or np.max(np.abs(steps - dt)) > 1e-9 * abs(dt):
        raise InputDataError("non_uniform_sampling", f"{path}: sampling interval is not uniform")
    return times, X, dt


def write_json(path, payload):
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _fmt_coef(value: float) -> str:
    return f"{value:.6g}"


def format_equations(model: Model) -> list[str]:
    """Render the active model as strings like ``dx2/dt = 28*x1 - 1*x2 - 1*x1*x3``."""
    names = model.spec.term_names()
    equations = []
    for d in range(model.state_dim):
        parts = []
        for m in range(model.spec.n_terms):
            if not model.mask[m, d]:
                continue
            coef = model.xi[m, d]
            term = names[m]
            body = _fmt_coef(abs(coef)) if term == "1" else f"{_fmt_coef(abs(coef))}*{term}"
            if not parts:
                parts.append(body if coef >= 0 else f"-{body}")
            else:
                parts.append(("+ " if coef >= 0 else "- ") + body)
        rhs = " ".join(parts) if parts else "0"
        equations.append(f"dx{d + 1}/dt = {rhs}")
    return equations
