"""Command-line front end: simulate benchmark data, fit models, run grids, self-check.

Subcommands
-----------
simulate   write noiseless + noisy trajectory CSVs and a JSON manifest
fit        run the full selection pipeline on a CSV (or a simulated system)
           and write a JSON model report plus the denoised trajectory
benchmark  run a (noise level x data length x seed) success-rate grid and
           write per-cell and aggregated CSV tables
check      run the fast invariant suite and exit nonzero on failure

Every run resolves its configuration to concrete values first and writes the
resolved configuration into the output manifest/report, so any output can be
reproduced bit-for-bit (wall-time fields aside) from its own provenance.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .checks import run_checks
from .collocation import build_fd_operators
from .dictionary import enumerate_terms
from .io import (InputDataError, format_equations, format_float, read_trajectory_csv,
                 write_json, write_trajectory_csv)
from .odr import Hyperparameters, SolverOptions
from .selection import SelectionOptions, greedy_select, masks_equal, param_error
from .systems import add_noise, get_system, ground_truth_model, integrate

__all__ = ["RunConfig", "BenchmarkGrid", "main",
           "cmd_simulate", "cmd_fit", "cmd_benchmark", "cmd_check"]

# Per-system defaults: finite-difference order and (sigma_dt, sigma_p), plus
# the polynomial order and sampling used in the benchmark studies.
SYSTEM_DEFAULTS = {
    "lorenz63": dict(fd_order=6, sigma_dt=1e-3, sigma_p=100.0, poly_order=2, dt=0.01, T=10.0),
    "vanderpol": dict(fd_order=4, sigma_dt=1e-2, sigma_p=10.0, poly_order=3, dt=0.01, T=20.0),
    "rossler": dict(fd_order=6, sigma_dt=5e-3, sigma_p=50.0, poly_order=2, dt=0.05, T=25.0),
}

_SOLVER_KEYS = ("g_tol", "x_tol", "f_tol", "max_iterations", "lm_lambda0",
                "lm_increase", "lm_decrease", "hard_constraint")
_SELECTION_KEYS = ("n_bootstrap", "n_multistart", "ridge_lambda", "patience",
                   "trial_max_iterations", "seed", "row_elimination", "n_jobs")


@dataclass
class RunConfig:
    """Fully resolved configuration of one run."""

    system: str | None
    csv: str | None
    system_params: dict
    state_dim: int
    poly_order: int
    include_constant: bool
    fd_order: int
    dt: float
    T: float
    fine_substeps: int
    noise_level: float
    seed: int
    sigma_x: float | str
    sigma_dt: float
    sigma_p: float
    solver: dict
    selection: dict

    def as_dict(self) -> dict:
        return asdict(self)


def load_config(raw: dict) -> RunConfig:
    """Merge a JSON configuration with per-system defaults.

    Accepts both the nested input schema (library/hyper sub-objects) and the
    flat resolved schema embedded in outputs, so any output's provenance block
    is itself a valid configuration.
    """
    system = raw.get("system")
    csv = raw.get("csv")
    if system is None and csv is None:
        raise InputDataError("config", "config must name a 'system' or an input 'csv'")
    defaults = SYSTEM_DEFAULTS.get(system, {})
    library = raw.get("library", {})
    hyper = raw.get("hyper", {})

    def pick(nested, nested_key, flat_key, fallback):
        if nested_key in nested:
            return nested[nested_key]
        if flat_key in raw:
            return raw[flat_key]
        return fallback

    if system is not None:
        state_dim = get_system(system, **raw.get("system_params", {})).state_dim
    else:
        state_dim = pick(library, "state_dim", "state_dim", None)
        if state_dim is None:
            raise InputDataError("config", "CSV runs must give library.state_dim")
    sigma_dt = pick(hyper, "sigma_dt", "sigma_dt", defaults.get("sigma_dt"))
    sigma_p = pick(hyper, "sigma_p", "sigma_p", defaults.get("sigma_p"))
    if sigma_dt is None or sigma_p is None:
        raise InputDataError("config", "sigma_dt and sigma_p must be set (no system defaults apply)")
    solver = {k: v for k, v in raw.get("solver", {}).items() if k in _SOLVER_KEYS}
    selection = {k: v for k, v in raw.get("selection", {}).items() if k in _SELECTION_KEYS}
    return RunConfig(
        system=system,
        csv=csv,
        system_params=raw.get("system_params", {}),
        state_dim=int(state_dim),
        poly_order=int(pick(library, "poly_order", "poly_order", defaults.get("poly_order", 2))),
        include_constant=bool(pick(library, "include_constant", "include_constant", True)),
        fd_order=int(raw.get("fd_order", defaults.get("fd_order", 6))),
        dt=float(raw.get("dt", defaults.get("dt", 0.01))),
        T=float(raw.get("T", defaults.get("T", 10.0))),
        fine_substeps=int(raw.get("fine_substeps", 10)),
        noise_level=float(raw.get("noise_level", 0.0)),
        seed=int(raw.get("seed", 0)),
        sigma_x=pick(hyper, "sigma_x", "sigma_x", "auto"),
        sigma_dt=float(sigma_dt),
        sigma_p=float(sigma_p),
        solver=solver,
        selection=selection,
    )


@dataclass
class BenchmarkGrid:
    noise_levels: list
    T_values: list
    seeds: list
    base: RunConfig

    def cells(self):
        """Deterministic row-major enumeration: noise level, then T, then seed."""
        for noise in self.noise_levels:
            for T in self.T_values:
                for seed in self.seeds:
                    yield float(noise), float(T), int(seed)


def _resolve_sigma_x(cfg: RunConfig, data) -> float:
    if cfg.sigma_x == "auto":
        if data.X_clean is None:
            raise InputDataError(
                "config", "sigma_x='auto' needs noise injection; external CSVs must set sigma_x")
        if data.sigma_x > 0:
            return float(data.sigma_x)
        # noiseless synthetic data: floor at a tiny fraction of the signal scale
        return max(1e-6 * float(np.std(data.X_clean)), 1e-12)
    return float(cfg.sigma_x)


def _simulate_data(cfg: RunConfig):
    system = get_system(cfg.system, **cfg.system_params)
    clean = integrate(system, cfg.dt, cfg.T, cfg.fine_substeps)
    noisy = add_noise(clean, cfg.noise_level, cfg.seed)
    return system, clean, noisy


def cmd_simulate(cfg: RunConfig, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    system, clean, noisy = _simulate_data(cfg)
    write_trajectory_csv(out / f"{system.name}_clean.csv", clean.times, clean.X_clean)
    write_trajectory_csv(out / f"{system.name}_noisy.csv", noisy.times, noisy.X_hat)
    manifest = {
        "name": system.name,
        "params": system.params,
        "x0": system.x0.tolist(),
        "dt": cfg.dt,
        "T": cfg.T,
        "noise_level": cfg.noise_level,
        "seed": cfg.seed,
        "sigma_x": noisy.sigma_x,
        "n_samples": noisy.n_samples,
        "config": cfg.as_dict(),
    }
    write_json(out / f"{system.name}_manifest.json", manifest)
    return manifest


def _load_fit_inputs(cfg: RunConfig):
    from .systems import TimeSeriesData

    truth_model = None
    if cfg.csv is not None:
        times, x_hat, dt = read_trajectory_csv(cfg.csv, expected_dim=cfg.state_dim)
        data = TimeSeriesData(times=times, X_hat=x_hat, X_clean=None, dt=dt,
                              sigma_x=0.0, noise_level=0.0, seed=None)
        name = Path(cfg.csv).stem
    else:
        system, _, data = _simulate_data(cfg)
        name = system.name
    spec = enumerate_terms(cfg.state_dim, cfg.poly_order, cfg.include_constant)
    if cfg.system is not None:
        try:
            truth_model = ground_truth_model(get_system(cfg.system, **cfg.system_params), spec)
        except ValueError:
            truth_model = None  # library does not cover the system; fits still run
    ops = build_fd_operators(cfg.fd_order, data.n_samples, data.dt)
    hyper = Hyperparameters(sigma_x=_resolve_sigma_x(cfg, data),
                            sigma_dt=cfg.sigma_dt, sigma_p=cfg.sigma_p)
    solver_opts = SolverOptions(**cfg.solver)
    sel = dict(cfg.selection)
    sel.setdefault("seed", cfg.seed)
    sel_opts = SelectionOptions(**sel)
    return name, data, spec, ops, hyper, solver_opts, sel_opts, truth_model


def cmd_fit(cfg: RunConfig, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    name, data, spec, ops, hyper, solver_opts, sel_opts, _ = _load_fit_inputs(cfg)
    result = greedy_select(data, ops, spec, hyper, sel_opts, solver_opts)
    model = result.chosen
    cov = result.chosen_evidence_result.xi_covariance \
        if result.chosen_evidence_result is not None else None
    stds = np.sqrt(np.diag(cov)) if cov is not None else np.full(model.n_active, np.nan)
    names = spec.term_names()
    terms = []
    for (flat, std) in zip(model.active_indices, stds):
        m, d = divmod(int(flat), model.state_dim)
        terms.append({
            "term": names[m],
            "equation": f"dx{d + 1}/dt",
            "coefficient": model.xi[m, d],
            "posterior_std": float(std),
        })
    denoised_path = out / f"{name}_denoised.csv"
    write_trajectory_csv(denoised_path, data.times, result.chosen_fit.x_star)
    report = {
        "input": cfg.csv or name,
        "equations": format_equations(model),
        "terms": terms,
        "log_evidence": result.chosen_evidence,
        "n_terms": model.n_active,
        "trace": [
            {"step": t.step, "removed": t.removed_name, "n_active": t.n_active,
             "log_evidence": t.log_evidence, "converged": t.converged}
            for t in result.trace
        ],
        "total_fits": result.total_fits,
        "wall_time_s": result.wall_time,
        "denoised_csv": denoised_path.name,
        "sigma_x": hyper.sigma_x,
        "config": cfg.as_dict(),
    }
    write_json(out / f"{name}_report.json", report)
    return report


def _run_cell(payload):
    raw, noise, T, seed = payload
    raw = dict(raw)
    raw["noise_level"] = noise
    raw["T"] = T
    raw["seed"] = seed
    cfg = load_config(raw)
    row = {"noise_level": noise, "T": T, "seed": seed, "success": 0,
           "param_error": -1.0, "log_evidence": np.nan, "n_terms": 0,
           "wall_time_s": 0.0, "error": None}
    t0 = time.perf_counter()
    try:
        _, data, spec, ops, hyper, solver_opts, sel_opts, truth = _load_fit_inputs(cfg)
        result = greedy_select(data, ops, spec, hyper, sel_opts, solver_opts)
        row["wall_time_s"] = time.perf_counter() - t0
        row["log_evidence"] = result.chosen_evidence
        row["n_terms"] = result.chosen.n_active
        if truth is not None and masks_equal(result.chosen.mask, truth.mask):
            row["success"] = 1
            row["param_error"] = param_error(result.chosen.xi, truth.xi)
    except Exception as exc:  # cell failures must not abort the grid
        row["wall_time_s"] = time.perf_counter() - t0
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


_BENCH_HEADER = "noise_level,T,seed,success,param_error,log_evidence,n_terms,wall_time_s"


def cmd_benchmark(raw_config: dict, out_dir, workers: int = 1) -> list[dict]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    grid_cfg = raw_config.get("grid", {})
    base = load_config(raw_config)
    grid = BenchmarkGrid(
        noise_levels=[float(v) for v in grid_cfg.get("noise_levels", [base.noise_level])],
        T_values=[float(v) for v in grid_cfg.get("T_values", [base.T])],
        seeds=[int(v) for v in grid_cfg.get("seeds", [base.seed])],
        base=base,
    )
    payloads = [(raw_config, noise, T, seed) for noise, T, seed in grid.cells()]
    if workers > 1 and len(payloads) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_cell, payloads))
    else:
        rows = [_run_cell(p) for p in payloads]

    lines = [_BENCH_HEADER]
    for row in rows:
        lines.append(",".join([
            format_float(row["noise_level"]), format_float(row["T"]), str(row["seed"]),
            str(row["success"]), format_float(row["param_error"]),
            format_float(row["log_evidence"]), str(row["n_terms"]),
            format_float(row["wall_time_s"]),
        ]))
    (out / "benchmark_results.csv").write_text("\n".join(lines) + "\n")

    summary_lines = ["noise_level,T,mean_success,mean_param_error,n_runs"]
    for noise in grid.noise_levels:
        for T in grid.T_values:
            cell_rows = [r for r in rows if r["noise_level"] == noise and r["T"] == T]
            if not cell_rows:
                continue
            successes = [r for r in cell_rows if r["success"] == 1]
            mean_success = len(successes) / len(cell_rows)
            mean_pe = float(np.mean([r["param_error"] for r in successes])) if successes else -1.0
            summary_lines.append(",".join([
                format_float(noise), format_float(T), format_float(mean_success),
                format_float(mean_pe), str(len(cell_rows)),
            ]))
    (out / "benchmark_summary.csv").write_text("\n".join(summary_lines) + "\n")

    manifest = {
        "config": base.as_dict(),
        "grid": {"noise_levels": grid.noise_levels, "T_values": grid.T_values,
                 "seeds": grid.seeds},
        "cell_errors": [
            {"noise_level": r["noise_level"], "T": r["T"], "seed": r["seed"], "error": r["error"]}
            for r in rows if r["error"]
        ],
    }
    write_json(out / "benchmark_manifest.json", manifest)
    return rows


def cmd_check(build_ops=build_fd_operators, stream=None) -> int:
    stream = stream or sys.stdout
    results = run_checks(build_ops)
    width = max(len(r.name) for r in results)
    failures = 0
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{r.name.ljust(width)}  {status}  {r.detail}", file=stream)
        failures += 0 if r.passed else 1
    print(f"{failures} failure(s) out of {len(results)} checks", file=stream)
    return 1 if failures else 0


def _read_config_file(path) -> dict:
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputDataError("config", f"cannot parse config {path}: {exc}") from exc


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="odrsindy",
        description="Discover sparse governing equations from noisy time series.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("simulate", "fit", "benchmark"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        if name == "benchmark":
            p.add_argument("--workers", type=int, default=1, help="parallel grid cells")
    sub.add_parser("check")

    args = parser.parse_args(argv)
    try:
        if args.command == "check":
            return cmd_check()
        raw = _read_config_file(args.config)
        if args.seed is not None:
            raw["seed"] = args.seed
        if args.command == "simulate":
            cmd_simulate(load_config(raw), args.out)
        elif args.command == "fit":
            cmd_fit(load_config(raw), args.out)
        elif args.command == "benchmark":
            cmd_benchmark(raw, args.out, workers=args.workers)
        return 0
    except InputDataError as exc:
        print(json.dumps({"error": exc.kind, "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
