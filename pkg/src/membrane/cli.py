"""
Command-line entry point.

    membrane solve|optimize|check-derivative|oracle|compare --config run.json
             [--out DIR] [--seed N] [--class rearrangement|lq|linfty]

Each run prints one JSON line on stdout. Exit codes: 0 success, 1 bad
configuration (nothing is written), 2 solver non-convergence, 3 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fem, io, oracle, shape
from .config import RunConfig, TrigLoad, build_load, load_config, read_f0_csv
from .errors import (ClassViolationError, ConfigurationError, DomainError, NonConvergenceError,
                     PerturbationTooLargeError, SolverError)
from .fem import BoundaryLoad
from .mesh import DomainSpec, Mesh, arc_region, build_mesh, make_region
from . import optimize as opt

logger = logging.getLogger("membrane")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_INTERNAL = 0, 1, 2, 3
COMMANDS = ("solve", "optimize", "check-derivative", "oracle", "compare")


@dataclass
class Result:
    """Everything a command produced: the report plus files to emit per format."""

    report: dict
    files: dict = field(default_factory=dict)  # format -> list of (name, writer)
    converged: bool = True

    def add(self, fmt: str, name: str, writer) -> None:
        self.files.setdefault(fmt, []).append((name, writer))


def _boundary_series(mesh: Mesh, load: BoundaryLoad, u):
    s = mesh.boundary_vertex_s
    return s, load.boundary_values(mesh, s), mesh.trace(np.asarray(u))


def _state_outputs(res: Result, mesh: Mesh, load: BoundaryLoad, u) -> None:
    s, f, ut = _boundary_series(mesh, load, u)
    res.add("csv", "solution.csv", lambda p: io.write_solution_csv(p, mesh, u))
    res.add("csv", "boundary.csv", lambda p: io.write_boundary_csv(p, s, f, ut))
    res.add("vtk", "solution.vtk", lambda p: io.write_vtk(p, mesh, u))
    res.add("svg", "boundary.svg", lambda p: io.plot_boundary(p, s, f, ut))


def _trace_outputs(res: Result, trace) -> None:
    res.add("csv", "trace.csv", lambda p: io.write_trace_csv(p, trace))
    res.add("svg", "trace.svg", lambda p: io.plot_trace(p, trace))


def _trace_dict(trace) -> list:
    return [dict(iter=s.iteration, J=s.J, threshold_s=s.threshold_s, measure=s.measure,
                 residual=s.residual) for s in trace.steps]


def _identity_residual(mesh, load, sol) -> float:
    J = fem.cost_J(mesh, load, sol)
    return abs(J - fem.energy(mesh, sol)) / max(abs(J), 1e-300) if J != 0 else abs(fem.energy(mesh, sol))


# --------------------------------------------------------------------------- commands


def cmd_solve(cfg: RunConfig, mesh: Mesh) -> Result:
    load = build_load(cfg.problem.load, mesh)
    solver = cfg.solver_config()
    sol = fem.solve_state(mesh, load, solver)
    J = fem.cost_J(mesh, load, sol)
    report = dict(command="solve", J_best=J, iterations=sol.newton_iterations,
                  converged=sol.converged, epsilon_final=sol.epsilon_final,
                  residuals=dict(newton=sol.residual_norm,
                                 energy_identity=_identity_residual(mesh, load, sol)),
                  max_u=float(np.max(sol.nodal_u)), min_u=float(np.min(sol.nodal_u)))
    res = Result(report, converged=sol.converged)
    _state_outputs(res, mesh, load, sol.nodal_u)
    return res


def _resolve_f0(cfg: RunConfig, mesh: Mesh) -> np.ndarray:
    pr = cfg.problem
    if pr.f0 is not None:
        f0 = np.asarray(pr.f0, dtype=float)
    elif pr.f0_file is not None:
        f0 = read_f0_csv(pr.f0_file)
    else:
        load = build_load(pr.load, mesh)
        mid = mesh.s_start + 0.5 * mesh.edge_lengths
        f0 = load.boundary_values(mesh, mid)
    if f0.shape != (mesh.n_boundary_edges,):
        raise ConfigurationError(f"f0 has {f0.size} values, mesh has {mesh.n_boundary_edges} edges")
    if np.any(f0 < 0) or not np.all(np.isfinite(f0)):
        raise ConfigurationError("f0 must be finite and non-negative")
    return f0


def _optimize_rearrangement(cfg, mesh, solver, ascent) -> Result:
    f0 = _resolve_f0(cfg, mesh)
    ms = opt.multistart_rearrangement(mesh, f0, solver, ascent)
    f, sol, trace = ms.best
    load = BoundaryLoad.edge(f)
    # f == f0[perm], ties resolved by position
    perm = np.empty(len(f), dtype=int)
    perm[np.argsort(f, kind="stable")] = np.argsort(f0, kind="stable")
    report = dict(command="optimize", load_class="rearrangement", J_best=float(trace.J_values.max()),
                  iterations=trace.iterations, terminated_reason=trace.terminated_reason,
                  best_start=ms.best_index, starts=len(ms.runs),
                  start_J=[r[2].steps[-1].J for r in ms.runs],
                  permutation=perm, load=f, trace=_trace_dict(trace),
                  residuals=dict(energy_identity=_identity_residual(mesh, load, sol)))
    res = Result(report, converged=sol.converged)
    res.add("csv", "load.csv", lambda p: io.write_load_csv(p, f))
    _trace_outputs(res, trace)
    _state_outputs(res, mesh, load, sol.nodal_u)
    return res


def _optimize_lq(cfg, mesh, solver, ascent) -> Result:
    p, q = cfg.problem.p, cfg.problem.q
    ext = opt.trace_extremal(mesh, q, p, solver)
    best = opt.lq_optimal_load(mesh, ext, p)
    sol = fem.solve_state(mesh, best.load, solver)
    J = fem.cost_J(mesh, best.load, sol)
    trace = opt.AscentTrace([opt.AscentStep(0, J, math.nan, opt.boundary_lq_norm(mesh, best.load.values, q),
                                            abs(J - best.predicted_J) / best.predicted_J)], "closed_form")
    report = dict(command="optimize", load_class="lq", J_best=J, S=ext.S, q=q, q_conj=ext.q_conj,
                  predicted_J=best.predicted_J, relative_gap=abs(J - best.predicted_J) / best.predicted_J,
                  norm_defect=best.norm_defect, iterations=ext.iterations,
                  extremal_converged=ext.converged, trace=_trace_dict(trace),
                  residuals=dict(energy_identity=_identity_residual(mesh, best.load, sol)))
    res = Result(report, converged=sol.converged and ext.converged)
    res.add("csv", "extremal.csv", lambda path: io.write_extremal_csv(path, ext.v))
    _trace_outputs(res, trace)
    _state_outputs(res, mesh, best.load, sol.nodal_u)
    return res


def _optimize_linfty(cfg, mesh, solver, ascent) -> Result:
    A = cfg.problem.A
    ms = opt.multistart_bathtub(mesh, A, solver, ascent)
    run = ms.best
    load = BoundaryLoad.indicator(run.region)
    resid, flagged = opt.optimality_residual(mesh, run.state, run.region)
    report = dict(command="optimize", load_class="linfty", J_best=float(run.trace.J_values.max()),
                  A=A, intervals=run.region.arcs(), measure=run.region.measure(),
                  n_intervals=len(run.region.arcs()), iterations=run.trace.iterations,
                  terminated_reason=run.trace.terminated_reason, degenerate=run.degenerate,
                  best_start=ms.best_index, starts=len(ms.runs),
                  start_J=[r.J for r in ms.runs], start_intervals=[len(r.region.arcs()) for r in ms.runs],
                  monotone=all(r.trace.is_monotone(1e-12) for r in ms.runs),
                  trace=_trace_dict(run.trace),
                  residuals=dict(optimality=resid, optimality_flagged=flagged,
                                 energy_identity=_identity_residual(mesh, load, run.state)),
                  max_u=float(np.max(run.state.nodal_u)))
    res = Result(report, converged=all(r.state.converged for r in ms.runs))
    res.add("csv", "region.csv", lambda p: io.write_region_csv(p, run.region))
    _trace_outputs(res, run.trace)
    _state_outputs(res, mesh, load, run.state.nodal_u)
    return res


def cmd_optimize(cfg: RunConfig, mesh: Mesh) -> Result:
    kind = cfg.problem.load_class
    if kind is None:
        raise ConfigurationError("optimize needs problem.class (or --class)")
    if kind == "linfty" and not 0 < cfg.problem.A < mesh.perimeter:
        raise ConfigurationError(f"A = {cfg.problem.A} must lie in (0, {mesh.perimeter})")
    solver, ascent = cfg.solver_config(), cfg.ascent_config()
    return {"rearrangement": _optimize_rearrangement, "lq": _optimize_lq,
            "linfty": _optimize_linfty}[kind](cfg, mesh, solver, ascent)


def _derivative_region(cfg: RunConfig, mesh: Mesh):
    d, P = cfg.derivative, mesh.perimeter
    if d.arcs is not None:
        return make_region(d.arcs, P)
    A = cfg.problem.A if cfg.problem.A is not None else P / 4
    if not 0 < A < P:
        raise ConfigurationError(f"A = {A} must lie in (0, {P})")
    return arc_region(d.center if d.center is not None else 0.0, A, P)


def cmd_check_derivative(cfg: RunConfig, mesh: Mesh) -> Result:
    region = _derivative_region(cfg, mesh)
    n = len(region.endpoints())
    if n == 0:
        raise ConfigurationError("derivative region must have endpoints")
    v = cfg.derivative.velocity
    if v == "rotate":
        values = np.ones(n)
    elif v == "translate":
        values = np.zeros(n)
        values[0] = 1.0
    else:
        if len(v) != n:
            raise ConfigurationError(f"velocity needs {n} values, got {len(v)}")
        values = np.asarray(v, dtype=float)
    vel = shape.TangentialVelocity(values)
    steps = cfg.derivative.step_sizes
    for t in steps:
        shape.perturb_region(region, vel, t)
        shape.perturb_region(region, vel, -t)
    rep = shape.fd_check(mesh, region, vel, cfg.problem.p, cfg.solver_config(), steps)
    report = dict(command="check-derivative", J_best=rep.J0, formula_dJ=rep.formula_dJ,
                  formula_dA=rep.formula_dA, observed_order=rep.observed_order,
                  intervals=region.arcs(), velocity=values,
                  entries=[dict(t=e.t, fd_dJ=e.fd_dJ, fd_dA=e.fd_dA, J_plus=e.J_plus,
                                J_minus=e.J_minus, converged=e.converged) for e in rep.entries],
                  gaps=rep.gaps, continuity=rep.continuity, iterations=len(rep.entries))
    res = Result(report, converged=all(e.converged for e in rep.entries))
    res.add("csv", "derivative.csv", lambda p: io.write_derivative_csv(p, rep))
    res.add("csv", "derivative_summary.json",
            lambda p: io.write_json(p, dict(observed_order=rep.observed_order,
                                            formula_dJ=rep.formula_dJ, formula_dA=rep.formula_dA)))
    res.add("svg", "derivative.svg", lambda p: io.plot_derivative(p, rep))
    return res


def _oracle_load(cfg: RunConfig, n_modes: int) -> oracle.FourierLoad:
    spec = cfg.problem.load
    if spec is None:
        return oracle.trig_load(cos={1: 1.0})
    if spec.kind == "trig":
        return oracle.trig_load(spec.a0, spec.cos, spec.sin)
    if spec.kind == "region":
        f = oracle.arc_fourier(make_region(spec.arcs, 2 * math.pi), n_modes)
        w = spec.weight
        return oracle.FourierLoad(w * f.a0, w * f.a, w * f.b, abs(w) * f.decay)
    if spec.kind == "zero":
        return oracle.trig_load()
    raise ConfigurationError("the disk oracle takes trig, region or zero loads")


def _require_disk_p2(cfg: RunConfig) -> None:
    if cfg.domain.kind != "disk" or cfg.domain.size != 1.0:
        raise ConfigurationError("the analytic oracle is for the unit disk only")
    if cfg.problem.p != 2:
        raise ConfigurationError("the analytic oracle needs p = 2")


def cmd_oracle(cfg: RunConfig, mesh: Mesh) -> Result:
    _require_disk_p2(cfg)
    oc = cfg.oracle
    if cfg.problem.load_class == "linfty":
        A = cfg.problem.A
        if not 0 < A < 2 * math.pi:
            raise ConfigurationError(f"A = {A} must lie in (0, 2pi)")
        best, rows = oracle.best_arc_search(A, oc.configs, cfg.ascent.seed, oc.n_modes)
        report = dict(command="oracle", J_best=best.J, best_config=best.config_id,
                      single_arc_J=rows[0].J, max_two_arc_J=max((r.J for r in rows[1:]), default=None),
                      configs=len(rows), n_modes=oc.n_modes, iterations=0)
    else:
        sol = oracle.solve_disk(_oracle_load(cfg, oc.n_modes))
        rows = [oracle.ArcSearchRow(0, "load", sol.J)]
        report = dict(command="oracle", J_best=sol.J, truncation_bound=sol.truncation_bound,
                      n_modes=sol.load.n_modes, iterations=0)
    res = Result(report)
    res.add("csv", "oracle.csv", lambda p: io.write_oracle_csv(p, rows))
    return res


def cmd_compare(cfg: RunConfig, mesh: Mesh) -> Result:
    _require_disk_p2(cfg)
    spec = cfg.problem.load
    if spec is not None and spec.kind not in ("trig", "region"):
        raise ConfigurationError("compare takes a trig or region load")
    J_ref = oracle.solve_disk(_oracle_load(cfg, max(cfg.oracle.n_modes, 1024))).J
    solver = cfg.solver_config()
    base = cfg.domain_spec()
    rows = []
    converged = True
    for k in cfg.oracle.refinements:
        m = build_mesh(DomainSpec(base.kind, base.size, base.n_boundary, k))
        if spec is not None and spec.kind == "region":
            # arcs are given in angle; scale to this mesh's arc length
            sc = m.perimeter / (2 * math.pi)
            load = BoundaryLoad.indicator(make_region([(a * sc, b * sc) for a, b in spec.arcs], m.perimeter),
                                          spec.weight)
        else:
            load = build_load(spec if spec is not None else _default_cos(), m)
        sol = fem.solve_state(m, load, solver)
        converged &= sol.converged
        J = fem.cost_J(m, load, sol)
        rows.append((k, J, J_ref, abs(J - J_ref)))
    errs = [r[3] for r in rows]
    ratios = [a / b if b > 0 else math.inf for a, b in zip(errs, errs[1:])]
    report = dict(command="compare", J_best=rows[-1][1], J_oracle=J_ref,
                  rows=[dict(n_refine=r[0], J_fem=r[1], J_oracle=r[2], abs_err=r[3]) for r in rows],
                  error_ratios=ratios, strictly_decreasing=all(b < a for a, b in zip(errs, errs[1:])),
                  iterations=len(rows))
    res = Result(report, converged=converged)
    res.add("csv", "compare.csv", lambda p: io.write_compare_csv(p, rows))
    return res


def _default_cos():
    return TrigLoad(kind="trig", cos={1: 1.0})


HANDLERS = {"solve": cmd_solve, "optimize": cmd_optimize, "check-derivative": cmd_check_derivative,
            "oracle": cmd_oracle, "compare": cmd_compare}


# --------------------------------------------------------------------------- driver


def emit_outputs(result: Result, directory, formats) -> list[str]:
    """Write the requested formats; ``report.json`` for json. Returns file names."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for fmt in ("csv", "vtk", "svg"):
        if fmt in formats:
            for name, writer in result.files.get(fmt, []):
                writer(out / name)
                written.append(name)
    if "json" in formats:
        io.write_json(out / "report.json", result.report)
        written.append("report.json")
    return written


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="membrane", description="p-Laplacian membrane load optimization")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="JSON run configuration")
    ap.add_argument("--out", help="output directory (overrides output.directory)")
    ap.add_argument("--seed", type=int, help="random seed (overrides ascent.seed)")
    ap.add_argument("--class", dest="load_class", choices=("rearrangement", "lq", "linfty"),
                    help="load class for optimize (overrides problem.class)")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def _summary(command, code, status, t0, **extra) -> None:
    line = dict(command=command, exit_code=code, status=status, wall_time=time.perf_counter() - t0, **extra)
    print(io.dumps(line, indent=None), flush=True)


def main(argv=None) -> int:
    t0 = time.perf_counter()
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    cmd = args.command
    try:
        cfg = load_config(args.config)
        if args.seed is not None and not 0 <= args.seed < 2 ** 64:
            raise ConfigurationError("seed must be an unsigned 64-bit integer")
        cfg = cfg.with_overrides(args.seed, args.load_class, args.out)
        mesh = build_mesh(cfg.domain_spec())
        result = HANDLERS[cmd](cfg, mesh)
    except (ConfigurationError, DomainError, ClassViolationError, PerturbationTooLargeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        _summary(cmd, EXIT_CONFIG, "config_error", t0)
        return EXIT_CONFIG
    except (NonConvergenceError, SolverError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        _summary(cmd, EXIT_SOLVER, "non_convergence", t0)
        return EXIT_SOLVER
    except Exception as exc:  # noqa: BLE001
        logger.exception("internal error")
        print(f"internal error: {exc!r}", file=sys.stderr)
        _summary(cmd, EXIT_INTERNAL, "internal_error", t0)
        return EXIT_INTERNAL

    try:
        files = emit_outputs(result, cfg.output.directory, set(cfg.output.formats))
    except OSError as exc:
        print(f"output failure: {exc}", file=sys.stderr)
        _summary(cmd, EXIT_INTERNAL, "io_error", t0)
        return EXIT_INTERNAL
    code = EXIT_OK if result.converged else EXIT_SOLVER
    if code:
        print("solver did not reach the Newton tolerance; outputs written", file=sys.stderr)
    _summary(cmd, code, "ok" if code == 0 else "non_convergence", t0,
             J_best=result.report.get("J_best"), outputs=files)
    return code


if __name__ == "__main__":
    sys.exit(main())
