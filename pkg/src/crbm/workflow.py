"""Offline training, online queries and validation sweeps for the Hertz benchmark."""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .bench import (
    MIN_REPORTED_N,
    HertzModel,
    ParameterSets,
    rb_error_metrics,
    solve_hertz,
)
from .eim import (
    AffineExpansion,
    EimConfig,
    EimDecomposition,
    ReducedModel,
    eim_error_curve,
    eim_train,
    solve_reduced_eim,
)
from .nitsche import FrictionKind, NonConvergence, SolveResult, SolverConfig
from .rom import ReducedBasis, pod, pod_projection_error, solve_reduced_naive

log = logging.getLogger(__name__)

FAMILY_PARTS = {"b": "matrix", "theta_n": "vector", "theta_tau": "vector"}


def thread_count() -> int:
    """Worker cap from ``CRBM_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("CRBM_THREADS", "1")))
    except ValueError:
        return 1


def _map(fn, items):
    items = list(items)
    n = min(thread_count(), len(items)) or 1
    if n == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


@dataclass
class HfRun:
    mu: float
    result: SolveResult | None
    error: str = ""

    @property
    def ok(self) -> bool:
        return self.result is not None and self.result.converged


def compute_snapshots(model: HertzModel, mus, config: SolverConfig = SolverConfig()) -> list[HfRun]:
    def run(mu):
        try:
            return HfRun(float(mu), solve_hertz(model, float(mu), config=config))
        except NonConvergence as exc:
            return HfRun(float(mu), None, str(exc))

    return _map(run, mus)


def family_parts(model: HertzModel) -> list[str]:
    tangential = model.config.friction.kind is FrictionKind.TRESCA
    return ["b", "theta_n"] + (["theta_tau"] if tangential else [])


def family_matrix(model: HertzModel, runs: list[HfRun], part: str, converged_only: bool = False,
                  first_iterate: int = 0) -> np.ndarray:
    """Rows ordered by mu ascending, then iteration ascending (k = first_iterate .. k_cv)."""
    rows = []
    for run in sorted(runs, key=lambda r: r.mu):
        system = model.system(run.mu)
        states = [run.result.U_cv] if converged_only else run.result.iterates[first_iterate:]
        for U in states:
            if part == "b":
                rows.append(system.b_values(U))
            else:
                rows.append(system.theta_values(U, "n" if part == "theta_n" else "tau"))
    return np.array(rows)


@dataclass
class OfflineResult:
    model: HertzModel
    sets: ParameterSets
    runs: list[HfRun]
    basis: ReducedBasis
    decomps: dict[str, EimDecomposition]
    reduced: ReducedModel
    eim_config: EimConfig
    solver: SolverConfig = field(default_factory=SolverConfig)
    train_curves: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def snapshot_matrix(self) -> np.ndarray:
        return np.column_stack([r.result.U_cv for r in self.runs]) - self.model.lift()[:, None]


def build_reduced_model(model: HertzModel, basis: ReducedBasis, decomps: dict[str, EimDecomposition],
                        runs: list[HfRun] = ()) -> ReducedModel:
    Z = basis.Z
    lift = model.lift()
    if runs:
        homogeneous = np.column_stack([r.result.U_cv for r in runs]) - lift[:, None]
        train_coeffs = Z.T @ (model.gram_ref @ homogeneous)
    else:
        train_coeffs = np.zeros((Z.shape[1], 0))
    pattern = model.pattern
    dofs = model.data_ref.points.dofs
    expansions = {
        name: AffineExpansion.build(d, pattern, Z, dofs, part="tau" if name == "theta_tau" else "n")
        for name, d in decomps.items()
    }
    return ReducedModel.build(
        Z=Z,
        lift=lift,
        stiffness=model.stiffness,
        correction=model.correction_ref(),
        mass=model.mass,
        laplacian=model.laplacian,
        char_length=model.config.char_length,
        friction=model.config.friction,
        expansions=expansions,
        data_ref=model.data_ref,
        gap_fn=model.gap_subset,
        train_mus=np.array([r.mu for r in runs]),
        train_coeffs=train_coeffs,
    )


def run_offline(model: HertzModel, sets: ParameterSets, N: int | None = None, pod_tol: float | None = None,
                eim_config: EimConfig = EimConfig(), solver: SolverConfig = SolverConfig(),
                runs: list[HfRun] | None = None, first_iterate: int = 0) -> OfflineResult:
    if model.config.friction.kind is FrictionKind.COULOMB:
        raise ValueError("reduced models are available for frictionless and Tresca contact only")
    runs = runs if runs is not None else compute_snapshots(model, sets.D_train, solver)
    failed = [r.mu for r in runs if not r.ok]
    if failed:
        raise NonConvergence(f"training solves failed for mu = {failed}")
    runs = sorted(runs, key=lambda r: r.mu)
    Y = np.column_stack([r.result.U_cv for r in runs]) - model.lift()[:, None]
    basis = pod(Y, model.gram_ref, N=N, tol=pod_tol)
    decomps, curves = {}, {}
    for part in family_parts(model):
        fam = family_matrix(model, runs, part, first_iterate=first_iterate)
        kind = FAMILY_PARTS[part]
        rows, cols = (model.pattern.rows, model.pattern.cols) if kind == "matrix" else (model.pattern.vec_dofs, None)
        decomps[part] = eim_train(fam, eim_config, kind, rows, cols)
        curves[part] = eim_error_curve(decomps[part], fam)
        log.info("EIM %s: rank %d", part, decomps[part].S)
    reduced = build_reduced_model(model, basis, decomps, runs)
    return OfflineResult(model, sets, runs, basis, decomps, reduced, eim_config, solver, curves)


# -- validation -------------------------------------------------------------------

@dataclass
class ValidationReport:
    pod_curve: list[tuple[int, float]]
    eim_curves: dict[str, dict[str, np.ndarray]]
    rb_rows: list[dict]
    rb_max: list[dict]
    valid_failures: list[float]


def validate(off: OfflineResult, valid_mus=None, Ns=None, include_naive: bool = True) -> ValidationReport:
    model = off.model
    Y = off.snapshot_matrix
    pod_curve = pod_projection_error(Y, off.basis, [model.gram(r.mu) for r in off.runs])

    valid_mus = off.sets.restricted_valid() if valid_mus is None else np.asarray(valid_mus)
    vruns = compute_snapshots(model, valid_mus, off.solver)
    good = [r for r in vruns if r.ok]
    failures = [r.mu for r in vruns if not r.ok]

    curves = {}
    for part, d in off.decomps.items():
        curves[part] = {
            "train": off.train_curves[part] if part in off.train_curves
            else eim_error_curve(d, family_matrix(model, off.runs, part)),
            "valid": eim_error_curve(d, family_matrix(model, good, part)) if good else np.zeros(d.S + 1),
            "converged": eim_error_curve(d, family_matrix(model, good, part, True)) if good else np.zeros(d.S + 1),
        }

    Ns = list(range(MIN_REPORTED_N, off.basis.N + 1)) if Ns is None else list(Ns)
    rows = []
    for run in good:
        system = model.system(run.mu)
        for N in Ns:
            row = {"mu": run.mu, "N": N}
            for label, fn in (("eim", lambda: solve_reduced_eim(off.reduced, run.mu, N, off.solver)),
                              ("naive", lambda: solve_reduced_naive(system, off.basis.Z[:, :N], model.lift(),
                                                                    off.solver))):
                if label == "naive" and not include_naive:
                    continue
                try:
                    _, U, res = fn()
                    metrics = rb_error_metrics(model, run.mu, run.result.U_cv, U)
                    row.update({f"{label}_{k}": v for k, v in metrics.items()})
                    row[f"{label}_iters"] = res.k_cv
                    row[f"{label}_ok"] = 1
                except NonConvergence:
                    row.update({f"{label}_e_u": np.nan, f"{label}_e_nn": np.nan, f"{label}_e_ntau": np.nan,
                                f"{label}_iters": -1, f"{label}_ok": 0})
            rows.append(row)
    rb_max = []
    for N in Ns:
        sel = [r for r in rows if r["N"] == N]
        agg = {"N": N}
        for label in ("eim", "naive") if include_naive else ("eim",):
            for key in ("e_u", "e_nn", "e_ntau"):
                # Maximum over the converged solves; failures are counted separately.
                vals = [r[f"{label}_{key}"] for r in sel if r[f"{label}_ok"]]
                agg[f"{label}_{key}_max"] = float(np.max(vals)) if vals else np.nan
            agg[f"{label}_failures"] = int(sum(1 - r[f"{label}_ok"] for r in sel))
        rb_max.append(agg)
    return ValidationReport(pod_curve, curves, rows, rb_max, failures)
