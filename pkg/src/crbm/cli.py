"""Command-line driver: ``crbm {mesh,hf-solve,offline,online,validate,study}``.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical non-convergence.
``CRBM_THREADS`` caps the number of parameter values solved concurrently.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .artifact import load_offline, load_reduced_model, offline_sections
from .bench import (
    NotApplicable,
    PAPER_H_LADDER,
    build_hertz_model,
    convergence_study,
    error_alart_curnier_normal,
    error_alart_curnier_tangential,
    gap_violation,
    nodal_threshold,
    parse_grid,
    solve_hertz,
)
from .config import ConfigError, RunConfig, load_config, load_config_text
from .eim import OnlineTimings, solve_reduced_eim
from .mesh import BoundaryTag, InvalidArc, MeshFailure
from .nitsche import FrictionKind, NonConvergence
from .report import write_csv, write_svg
from .store import StoreError, read_store, write_store
from .workflow import run_offline, validate

log = logging.getLogger("crbm")

EXIT_OK, EXIT_USAGE, EXIT_NONCONVERGENCE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="run configuration file (INI sections)")
    p.add_argument("--h", dest="h_target", type=float, help="target mesh size on the reference disk")
    p.add_argument("--degree", type=int, choices=(1, 2))
    p.add_argument("--friction", choices=("none", "tresca", "coulomb"))
    p.add_argument("--s", type=float, help="Tresca threshold")
    p.add_argument("--nuF", dest="nu_F", type=float, help="Coulomb coefficient")
    p.add_argument("--delta-u", dest="delta_u", type=float)
    p.add_argument("--max-iter", dest="max_iter", type=int)
    p.add_argument("--reports", help="report directory")
    p.add_argument("--no-svg", action="store_true", help="skip SVG plots")


def _add_rom(p: argparse.ArgumentParser):
    p.add_argument("--train", help="training grid, 'start:step:count' or comma list")
    p.add_argument("--seed", type=int)
    p.add_argument("--n-valid", dest="n_valid", type=int)
    p.add_argument("--N", type=int, help="reduced dimension (default: numerical rank)")
    p.add_argument("--pod-tol", dest="pod_tol", type=float)
    p.add_argument("--delta-eim", dest="delta_eim", type=float)
    p.add_argument("--max-terms", dest="max_terms", type=int)
    p.add_argument("--store", help="CRBM artifact path")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="crbm", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"crbm {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("mesh", help="build the reference half-disk mesh and report its counts")
    _add_common(p)
    p.add_argument("--out", help="write nodes/triangles/boundary to a CRBM container")

    p = sub.add_parser("hf-solve", help="high-fidelity Nitsche solve at one parameter value")
    _add_common(p)
    p.add_argument("--mu", type=float, required=True)
    p.add_argument("--out", help="write U_cv and nodal traces to a CRBM container")

    p = sub.add_parser("offline", help="snapshots, POD, EIM and reduced arrays")
    _add_common(p)
    _add_rom(p)

    p = sub.add_parser("online", help="hyper-reduced solve from a stored offline artifact")
    p.add_argument("--store", required=True)
    p.add_argument("--mu", type=float, required=True)
    p.add_argument("--N", type=int, required=True)
    p.add_argument("--initial", choices=("nearest", "lift"), default="nearest")
    p.add_argument("--jacobian", choices=("eim", "consistent"), default="eim")
    p.add_argument("--reports")
    p.add_argument("--out", help="write coefficients and reconstruction to a CRBM container")

    p = sub.add_parser("validate", help="POD, EIM and reduced-basis error curves")
    _add_common(p)
    _add_rom(p)
    p.add_argument("--Ns", help="reduced dimensions, 'start:step:count' or comma list (default 10..N)")
    p.add_argument("--full-range", action="store_true", help="validate on all of D_valid, not only mu <= 1.18")
    p.add_argument("--no-naive", action="store_true", help="skip the full-order projected solver")

    p = sub.add_parser("study", help="mesh convergence table of the Alart-Curnier errors")
    _add_common(p)
    _add_rom(p)
    p.add_argument("--mus", default="0.7,1.0,1.3")
    p.add_argument("--hs", help="mesh sizes, comma list (default: 0.005,0.0025,0.00125)")
    p.add_argument("--eim-ranks", action="store_true",
                   help="also run the offline stage on the finest mesh and report the EIM ranks")
    return parser


def _config(args) -> RunConfig:
    cfg = load_config(getattr(args, "config", None))
    keys = ("h_target", "degree", "friction", "s", "nu_F", "delta_u", "max_iter", "reports", "train", "seed",
            "n_valid", "N", "pod_tol", "delta_eim", "max_terms", "store")
    try:
        return cfg.with_overrides(**{k: getattr(args, k, None) for k in keys})
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _reports(cfg_reports: str) -> Path:
    path = Path(cfg_reports)
    path.mkdir(parents=True, exist_ok=True)
    return path


# -- commands -------------------------------------------------------------------------

def cmd_mesh(args) -> int:
    cfg = _config(args)
    model = build_hertz_model(cfg.hertz())
    mesh = model.mesh
    row = {
        "h_target": cfg.h_target,
        "n_nodes": mesh.n_nodes,
        "n_triangles": len(mesh.triangles),
        "n_contact_edges": len(mesh.edges_with(BoundaryTag.CONTACT)),
        "n_contact_nodes": len(model.space.sampler.nodes),
        "n_dof": model.n_dof,
    }
    path = write_csv(_reports(cfg.reports) / "mesh.csv", "mesh", [row])
    if args.out:
        write_store(args.out, {"config": cfg.to_text(), "nodes": mesh.nodes,
                               "tris": mesh.triangles.astype(np.uint32),
                               "bedges": mesh.boundary_edges.astype(np.uint32),
                               "bedge_tags": mesh.boundary_tags.astype(np.uint8)})
    print(" ".join(f"{k}={v}" for k, v in row.items()))
    print(f"wrote {path}")
    return EXIT_OK


def hf_summary_row(model, mu, friction, result) -> dict:
    trace = model.nodal_traces(mu, result.U_cv)
    row = {"mu": mu, "friction": friction.kind.value, "n_dof": model.n_dof, "k_cv": result.k_cv,
           "outer_iterations": result.outer_iterations, "converged": result.converged,
           "max_gap_violation": gap_violation(model, mu, result.U_cv),
           "energy": model.system(mu, friction).energies(result.U_cv)["J"]}
    try:
        row["e_AC_n"] = error_alart_curnier_normal(trace)
        if friction.tangential:
            row["e_AC_ntau"] = error_alart_curnier_tangential(trace, nodal_threshold(model, mu, friction,
                                                                                     result.U_cv))
    except NotApplicable:
        pass
    return row


def cmd_hf_solve(args) -> int:
    cfg = _config(args)
    hertz = cfg.hertz()
    if not cfg.mu_min <= args.mu <= cfg.mu_max:
        raise ConfigError(f"mu = {args.mu} outside [{cfg.mu_min}, {cfg.mu_max}]")
    model = build_hertz_model(hertz)
    result = solve_hertz(model, args.mu, config=cfg.solver(), coulomb=cfg.coulomb())
    row = hf_summary_row(model, args.mu, hertz.friction, result)
    path = write_csv(_reports(cfg.reports) / f"hf_{cfg.friction}_mu{args.mu:g}.csv", "hf_summary", [row])
    if args.out:
        tr = model.nodal_traces(args.mu, result.U_cv)
        sections = {"config": cfg.to_text(), "hf/mu": np.array(args.mu), "hf/U_cv": result.U_cv,
                    "hf/k_cv": np.array(result.k_cv), "hf/increments": np.asarray(result.increments, float)}
        for name in ("sigma_nn", "sigma_ntau", "v_n", "v_tau", "p_n_gamma_g", "p_n_gamma_0", "p_tau"):
            sections[f"hf/trace/{name}"] = getattr(tr, name)
        write_store(args.out, sections)
    print(" ".join(f"{k}={v}" for k, v in row.items()))
    print(f"wrote {path}")
    return EXIT_OK


def cmd_offline(args) -> int:
    cfg = _config(args)
    hertz = cfg.hertz()
    if hertz.friction.kind is FrictionKind.COULOMB:
        raise ConfigError("the offline stage supports friction = none or tresca")
    model = build_hertz_model(hertz)
    t0 = time.perf_counter()
    off = run_offline(model, cfg.parameter_sets(), N=cfg.N, pod_tol=cfg.pod_tol, eim_config=cfg.eim(),
                      solver=cfg.solver())
    write_store(cfg.store, offline_sections(off, cfg.to_text()))
    ranks = " ".join(f"S_{p}={d.S}" for p, d in off.decomps.items())
    print(f"n_dof={model.n_dof} snapshots={len(off.runs)} N={off.basis.N} {ranks} "
          f"time={time.perf_counter() - t0:.1f}s")
    print(f"wrote {cfg.store}")
    return EXIT_OK


def cmd_online(args) -> int:
    sections = read_store(args.store)
    cfg = load_config_text(sections["config"])
    if args.reports:
        cfg = cfg.with_overrides(reports=args.reports)
    model = load_reduced_model(sections, cfg.hertz())
    if not 1 <= args.N <= model.N_max:
        raise ConfigError(f"N must lie in [1, {model.N_max}]")
    timings = OnlineTimings()
    a, U, result = solve_reduced_eim(model, args.mu, args.N, cfg.solver(), timings, args.initial, args.jacobian)
    row = {"mu": args.mu, "N": args.N, "k_cv": result.k_cv, "converged": result.converged,
           "t_coefficients": timings.coefficients, "t_reduced_solve": timings.reduced_solve,
           "t_reconstruction": timings.reconstruction}
    path = write_csv(_reports(cfg.reports) / f"online_mu{args.mu:g}_N{args.N}.csv", "online", [row])
    if args.out:
        write_store(args.out, {"online/mu": np.array(args.mu), "online/coefficients": a, "online/U": U})
    per_iter = (timings.coefficients + timings.reduced_solve) / max(result.k_cv, 1)
    print(f"mu={args.mu} N={args.N} k_cv={result.k_cv} coefficients={timings.coefficients:.3e}s "
          f"reduced_solve={timings.reduced_solve:.3e}s reconstruction={timings.reconstruction:.3e}s "
          f"per_iteration={per_iter:.3e}s")
    print(f"wrote {path}")
    return EXIT_OK


def _offline_for(cfg: RunConfig, model):
    store = Path(cfg.store)
    if store.exists():
        sections = read_store(store)
        if load_config_text(sections["config"]).to_text() != cfg.to_text():
            log.warning("configuration differs from the stored artifact; using the stored configuration")
            cfg = load_config_text(sections["config"]).with_overrides(reports=cfg.reports)
            model = build_hertz_model(cfg.hertz())
        return load_offline(sections, model, cfg.parameter_sets(), cfg.solver(), cfg.eim()), cfg
    off = run_offline(model, cfg.parameter_sets(), N=cfg.N, pod_tol=cfg.pod_tol, eim_config=cfg.eim(),
                      solver=cfg.solver())
    write_store(store, offline_sections(off, cfg.to_text()))
    return off, cfg


def write_validation(report, out: Path, svg: bool = True, seed: int | None = None) -> list[Path]:
    paths = [write_csv(out / "pod.csv", "pod", [{"N": n, "e_POD": e} for n, e in report.pod_curve])]
    eim_rows = []
    for part, curves in report.eim_curves.items():
        for S in range(len(curves["train"])):
            eim_rows.append({"family": part, "S": S, "e_train": curves["train"][S],
                             "e_valid": curves["valid"][S], "e_converged": curves["converged"][S]})
    paths.append(write_csv(out / "eim.csv", "eim", eim_rows))
    paths.append(write_csv(out / "rb_rows.csv", "rb_rows", report.rb_rows))
    paths.append(write_csv(out / "rb_max.csv", "rb_max", report.rb_max))
    if svg:
        pod = report.pod_curve
        paths.append(write_svg(out / "pod.svg", {"e_POD": ([n for n, _ in pod], [e for _, e in pod])},
                               title="POD projection error", xlabel="N", ylabel="e_POD"))
        for part, curves in report.eim_curves.items():
            S = list(range(len(curves["train"])))
            paths.append(write_svg(out / f"eim_{part}.svg", {k: (S, list(v)) for k, v in curves.items()},
                                   title=f"EIM error, {part}", xlabel="S", ylabel="relative error"))
        Ns = [r["N"] for r in report.rb_max]
        for key in ("e_u", "e_nn", "e_ntau"):
            series = {label: (Ns, [r.get(f"{label}_{key}_max", np.nan) for r in report.rb_max])
                      for label in ("eim", "naive") if f"{label}_{key}_max" in report.rb_max[0]}
            if series:
                paths.append(write_svg(out / f"rb_{key}.svg", series, title=f"max {key} over validation",
                                       xlabel="N", ylabel=key))
    return paths


def cmd_validate(args) -> int:
    cfg = _config(args)
    model = build_hertz_model(cfg.hertz())
    off, cfg = _offline_for(cfg, model)
    sets = off.sets
    valid = sets.D_valid if args.full_range else sets.restricted_valid(cfg.valid_upper)
    Ns = parse_grid(args.Ns).astype(int) if args.Ns else None
    report = validate(off, valid, Ns, include_naive=not args.no_naive)
    paths = write_validation(report, _reports(cfg.reports), svg=not args.no_svg)
    failures = sum(r.get("eim_failures", 0) for r in report.rb_max)
    print(f"validation points={len(valid)} seed={sets.seed} hf_failures={len(report.valid_failures)} "
          f"online_failures={failures}")
    for p in paths:
        print(f"wrote {p}")
    return EXIT_OK


def cmd_study(args) -> int:
    cfg = _config(args)
    mus = [float(v) for v in args.mus.split(",")]
    hs = [float(v) for v in args.hs.split(",")] if args.hs else list(PAPER_H_LADDER)
    table = convergence_study(cfg.hertz(), mus, hs, cfg.solver())
    orders = table.orders()
    rows = []
    for i, mu in enumerate(table.mus):
        for j, h in enumerate(table.hs):
            rows.append({"metric": table.metric, "mu": mu, "h": h, "error": table.errors[i, j],
                         "iterations": table.iterations[i, j],
                         "order": orders[i, j - 1] if j > 0 and orders.shape[1] else None})
    path = write_csv(_reports(cfg.reports) / "study.csv", "study", rows)
    for r in rows:
        order = "" if r["order"] is None else f" order={r['order']:.2f}"
        print(f"{r['metric']} mu={r['mu']:g} h={r['h']:g} error={100 * r['error']:.3f}%{order}")
    if args.eim_ranks:
        h = min(hs)
        fine = cfg.with_overrides(h_target=h)
        model = build_hertz_model(fine.hertz())
        off = run_offline(model, fine.parameter_sets(), eim_config=fine.eim(), solver=fine.solver())
        ranks = " ".join(f"S_{p}={d.S}" for p, d in off.decomps.items())
        print(f"h={h:g} n_dof={model.n_dof} delta_eim={fine.delta_eim:g} {ranks}")
    print(f"wrote {path}")
    return EXIT_OK


COMMANDS = {"mesh": cmd_mesh, "hf-solve": cmd_hf_solve, "offline": cmd_offline, "online": cmd_online,
            "validate": cmd_validate, "study": cmd_study}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"crbm: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except NonConvergence as exc:
        print(f"crbm: non-convergence: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except (ConfigError, InvalidArc, MeshFailure, StoreError, OSError, ValueError) as exc:
        print(f"crbm: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
