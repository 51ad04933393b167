"""Model selection: bootstrap-seeded multistart fit, then greedy evidence-driven elimination.

The full library is fitted first, warm-started from the observed data and a
multistart set of bootstrap ridge-regression coefficient estimates.  Greedy
rounds then try removing each active coefficient in turn, warm-starting every
trial from the incumbent optimum; a trial that fails to converge within its
iteration cap is treated as evidence -inf, so the corresponding term is
retained.  The incumbent follows the best trial of each round, and the search
stops after `patience` consecutive rounds without a new evidence maximum (or
at a single remaining coefficient).  The chosen model is the global evidence
maximizer over all converged incumbents.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .collocation import CollocationOperators
from .dictionary import LibrarySpec, eval_theta, monomial_name
from .evidence import EvidenceResult, evaluate_evidence
from .odr import FitResult, Hyperparameters, Model, SolverOptions, solve_odr

__all__ = [
    "SelectionOptions",
    "TraceEntry",
    "CandidateRecord",
    "SelectionResult",
    "bootstrap_linear_init",
    "fit_full_library",
    "greedy_select",
    "param_error",
    "masks_equal",
]

_EVIDENCE_TIE = 1e-9


@dataclass(frozen=True)
class SelectionOptions:
    """Knobs of the selection loop; all counts must be >= 1."""

    n_bootstrap: int = 100
    n_multistart: int = 8
    ridge_lambda: float = 1e-6
    patience: int = 3
    trial_max_iterations: int = 100
    seed: int = 0
    row_elimination: bool = False
    n_jobs: int = 1

    def __post_init__(self):
        for name in ("n_bootstrap", "n_multistart", "patience", "trial_max_iterations", "n_jobs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.ridge_lambda < 0:
            raise ValueError("ridge_lambda must be >= 0")


@dataclass(frozen=True)
class TraceEntry:
    step: int
    removed: tuple | None     # (term index, state index) or (term index, None) in row mode
    removed_name: str | None
    n_active: int
    log_evidence: float
    converged: bool


@dataclass(frozen=True)
class CandidateRecord:
    removed: tuple
    removed_name: str
    log_evidence: float
    converged: bool
    iterations: int


@dataclass
class SelectionResult:
    chosen: Model
    chosen_evidence: float
    trace: list[TraceEntry]
    per_step_candidates: list[list[CandidateRecord]] | None
    total_fits: int
    wall_time: float
    chosen_fit: FitResult | None = None
    chosen_evidence_result: EvidenceResult | None = None


def param_error(xi, xi_true) -> float:
    """Normalized coefficient error ||xi - xi_true||_F / ||xi_true||_F."""
    xi = np.asarray(xi, dtype=float)
    xi_true = np.asarray(xi_true, dtype=float)
    if xi.shape != xi_true.shape:
        raise ValueError(f"shape mismatch: {xi.shape} vs {xi_true.shape}")
    denom = float(np.linalg.norm(xi_true))
    if denom == 0.0:
        raise ValueError("ground-truth coefficients have zero norm")
    return float(np.linalg.norm(xi - xi_true)) / denom


def masks_equal(a, b) -> bool:
    """Exact sparsity-pattern recovery check."""
    return bool(np.array_equal(np.asarray(a, bool), np.asarray(b, bool)))


def bootstrap_linear_init(data, ops: CollocationOperators, spec: LibrarySpec,
                          opts: SelectionOptions) -> list[np.ndarray]:
    """Multistart coefficient initializers from bootstrap ridge regression.

    Regresses L_dt X_hat on L_I Theta(X_hat) with rows resampled with
    replacement; member 0 keeps the full sample, so a single-member ensemble
    reduces to plain ridge regression.  Returns the first n_multistart
    members plus the elementwise median of the whole ensemble.
    """
    theta_i = eval_theta(spec, np.asarray(data.X_hat, dtype=float)[ops.interior])
    dx = ops.L_dt @ np.asarray(data.X_hat, dtype=float)
    n_rows, n_terms = theta_i.shape
    if n_rows < n_terms:
        raise ValueError(f"need at least {n_terms} collocation rows, got {n_rows}")
    rng = np.random.default_rng(opts.seed)
    members = []
    for member in range(opts.n_bootstrap):
        idx = np.arange(n_rows) if member == 0 else rng.integers(0, n_rows, size=n_rows)
        a = theta_i[idx]
        gram = a.T @ a
        lam = opts.ridge_lambda * np.trace(gram) / n_terms
        gram[np.diag_indices_from(gram)] += lam
        members.append(np.linalg.solve(gram, a.T @ dx[idx]))
    ensemble = np.stack(members)
    inits = members[: opts.n_multistart]
    inits.append(np.median(ensemble, axis=0))
    return inits


def fit_full_library(data, ops, spec, hyper: Hyperparameters, opts: SelectionOptions,
                     solver_opts: SolverOptions | None = None) -> FitResult:
    """Multistart fit of the dense coefficient matrix; best converged loss wins.

    The observed data always serves as the state initial guess.  If no start
    converges, the lowest-loss non-converged result is returned, flagged.
    """
    solver_opts = solver_opts or SolverOptions()
    model = Model.full(spec, data.X_hat.shape[1])
    best = None
    for xi0 in bootstrap_linear_init(data, ops, spec, opts):
        fit = solve_odr(data.X_hat, xi0.ravel(), data, ops, hyper, model, solver_opts)
        if best is None:
            best = fit
        elif (fit.converged, -fit.loss_total) > (best.converged, -best.loss_total):
            best = fit
    return best


def _candidate_ids(model: Model, row_mode: bool) -> list[tuple]:
    if row_mode:
        rows = sorted({int(m) for m, _ in zip(*np.nonzero(model.mask))})
        return [(m, None) for m in rows]
    return [(int(m), int(d)) for m, d in zip(*np.nonzero(model.mask))]


def _drop(model: Model, removed: tuple) -> Model | None:
    m, d = removed
    if d is None:
        mask = model.mask.copy()
        mask[m, :] = False
        if mask.sum() < 1:
            return None
        xi = model.xi.copy()
        xi[m, :] = 0.0
        return Model(model.spec, mask, xi)
    if model.n_active <= 1:
        return None
    return model.drop_entry(m * model.state_dim + d)


def _removed_name(spec: LibrarySpec, removed: tuple) -> str:
    m, d = removed
    name = monomial_name(spec.terms[m])
    return f"{name} (all equations)" if d is None else f"{name} -> dx{d + 1}/dt"


def _try_candidate(args):
    (removed, candidate, x_warm, data, ops, hyper, trial_opts) = args
    fit = solve_odr(x_warm, candidate.xi_active, data, ops, hyper, candidate, trial_opts)
    ev = None
    value = -np.inf
    if fit.converged:
        ev = evaluate_evidence(fit, data, ops, hyper)
        value = ev.log_evidence
    return removed, fit, ev, value


def greedy_select(data, ops, spec, hyper: Hyperparameters, opts: SelectionOptions | None = None,
                  solver_opts: SolverOptions | None = None) -> SelectionResult:
    """Full selection pipeline; deterministic for fixed (data, options, seed)."""
    t0 = time.perf_counter()
    opts = opts or SelectionOptions()
    solver_opts = solver_opts or SolverOptions()
    trial_opts = SolverOptions(
        g_tol=solver_opts.g_tol, x_tol=solver_opts.x_tol, f_tol=solver_opts.f_tol,
        max_iterations=opts.trial_max_iterations, lm_lambda0=solver_opts.lm_lambda0,
        lm_increase=solver_opts.lm_increase, lm_decrease=solver_opts.lm_decrease,
        hard_constraint=solver_opts.hard_constraint,
    )

    incumbent = fit_full_library(data, ops, spec, hyper, opts, solver_opts)
    total_fits = opts.n_multistart + 1
    if incumbent.converged:
        incumbent_ev = evaluate_evidence(incumbent, data, ops, hyper)
        incumbent_value = incumbent_ev.log_evidence
    else:
        incumbent_ev, incumbent_value = None, -np.inf

    trace = [TraceEntry(0, None, None, incumbent.model.n_active,
                        incumbent_value, incumbent.converged)]
    candidates_log: list[list[CandidateRecord]] = []
    best_value = incumbent_value
    best_fit, best_ev = incumbent, incumbent_ev
    declines = 0
    step = 0

    pool = ProcessPoolExecutor(max_workers=opts.n_jobs) if opts.n_jobs > 1 else None
    try:
        while incumbent.model.n_active > 1 and declines < opts.patience:
            step += 1
            ids = _candidate_ids(incumbent.model, opts.row_elimination)
            jobs = []
            for removed in ids:
                candidate = _drop(incumbent.model, removed)
                if candidate is None:
                    continue
                jobs.append((removed, candidate, incumbent.x_star, data, ops, hyper, trial_opts))
            if not jobs:
                break
            results = list(pool.map(_try_candidate, jobs)) if pool else \
                [_try_candidate(j) for j in jobs]
            total_fits += len(results)
            candidates_log.append([
                CandidateRecord(removed, _removed_name(spec, removed), value,
                                fit.converged, fit.iterations)
                for removed, fit, _, value in results
            ])
            # round winner: highest evidence; near-ties towards the lower
            # coefficient index (the list is already in ascending index order)
            round_best = None
            for removed, fit, ev, value in results:
                if round_best is None or value > round_best[3] + _EVIDENCE_TIE:
                    round_best = (removed, fit, ev, value)
            removed, fit, ev, value = round_best
            if not np.isfinite(value):
                # no removable term this round: every trial failed to converge
                trace.append(TraceEntry(step, removed, _removed_name(spec, removed),
                                        incumbent.model.n_active - 1, value, False))
                break
            incumbent, incumbent_ev, incumbent_value = fit, ev, value
            trace.append(TraceEntry(step, removed, _removed_name(spec, removed),
                                    incumbent.model.n_active, value, fit.converged))
            if value > best_value + _EVIDENCE_TIE:
                best_value, best_fit, best_ev = value, fit, ev
                declines = 0
            elif abs(value - best_value) <= _EVIDENCE_TIE and \
                    fit.model.n_active < best_fit.model.n_active:
                # parsimony tie-break at equal evidence
                best_value, best_fit, best_ev = value, fit, ev
                declines = 0
            else:
                declines += 1
    finally:
        if pool:
            pool.shutdown()

    return SelectionResult(
        chosen=best_fit.model,
        chosen_evidence=best_value,
        trace=trace,
        per_step_candidates=candidates_log,
        total_fits=total_fits,
        wall_time=time.perf_counter() - t0,
        chosen_fit=best_fit,
        chosen_evidence_result=best_ev,
    )
