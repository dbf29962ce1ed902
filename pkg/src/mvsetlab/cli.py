"""Command-line experiment runner.

Exit status: 0 when every requested check passes, 1 on a failed check or a
numerical failure, 2 on configuration errors.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import acceptance, io
from .config import ConfigError, load_config
from .errors import MVSetLabError, ParameterError
from .estimates import harnack_ensemble, key_estimate_fit
from .green import green_function, verify_green
from .manifold import HYPERBOLIC, assemble_operators, closed_form_area
from .meanvalue import (mvs_sweep, mvt_verify, nonparabolic_boundedness_probe,
                        prepare_ambient, r0_search)
from .obstacle import (check_complementarity, free_boundary_band, membrane_gap_view,
                       probe_nondegeneracy, probe_optimal_regularity, solve_membrane)

log = logging.getLogger("mvsetlab")


def _snap_info(mesh, x0_xy, vertex):
    return {"x0_requested": list(map(float, x0_xy)), "x0_vertex": int(vertex),
            "x0_snapped": [float(c) for c in mesh.vertices[vertex]]}


def cmd_mesh(cfg, out, args):
    m = cfg.build_mesh()
    io.write_off(out / "mesh.off", m)
    io.write_vtk(out / "mesh.vtk", m, {"conformal_factor": m.conformal_factor,
                                       "boundary": m.boundary.astype(float)})
    ops = assemble_operators(m)
    summary = {"n_vertices": m.n_vertices, "n_triangles": len(m.triangles),
               "geometry_tag": m.geometry_tag, "mesh_size": m.mesh_size(),
               "total_lumped_mass": float(ops.lumped_mass.sum()), "metric_area": m.metric_area()}
    if cfg.geometry["tag"] != "custom":
        summary["closed_form_area"] = closed_form_area(cfg.geometry["tag"],
                                                       cfg.geometry.get("params", {}))
    return summary, {"assembled": True}


def cmd_green(cfg, out, args):
    m = cfg.build_mesh()
    ops = assemble_operators(m)
    pole = m.nearest_vertex(cfg.x0)
    g = green_function(ops, pole)
    audit = verify_green(g, tol=cfg.tol("green_audit"))
    io.write_vtk(out / "green.vtk", m, {"G": g.values})
    summary = {**_snap_info(m, cfg.x0, pole), "audit": audit.as_dict()}
    return summary, {c.name: c.passed for c in audit.checks}


def cmd_membrane(cfg, out, args):
    m = cfg.build_mesh()
    m, ops, g = prepare_ambient(m, m.nearest_vertex(cfg.x0), cfg.ambient_radius)
    sol = solve_membrane(ops, g, cfg.membrane_r, tol=cfg.tol("psor"))
    gap = check_complementarity(sol, tol=cfg.tol("complementarity"))
    low = membrane_gap_view(sol)
    band = np.flatnonzero(free_boundary_band(low))
    h = m.mesh_size()
    radii = [2 * h, 4 * h, 8 * h]
    checks = {"complementarity": gap.no_gap}
    summary = {**_snap_info(m, cfg.x0, g.pole), "r": cfg.membrane_r,
               "iterations": sol.report.iterations,
               "complementarity_violation": sol.report.complementarity_violation,
               "gap_counts": gap.counts(), "free_boundary_vertices": len(band)}
    if len(band):
        p0 = int(band[np.argmin(np.abs(m.distances_from(g.pole)[band] - np.median(
            m.distances_from(g.pole)[band])))])
        fit = probe_optimal_regularity(low, p0, radii)
        io.write_csv(out / "probe_regularity.csv", ["s", "sup", "bound", "pass"], fit.rows(low.mu))
        summary["regularity_exponent"] = fit.exponent
        nd = probe_nondegeneracy(low, _inner_point(low, g.pole, p0), radii)
        io.write_csv(out / "probe_nondegeneracy.csv", ["s", "sup", "bound", "pass"], nd.rows)
        summary["nondegeneracy_constant"] = nd.c_nd
        checks["nondegeneracy"] = nd.passed
    io.write_vtk(out / "membrane.vtk", m, {"w": sol.values, "G": g.values,
                                           "noncontact": sol.noncontact.astype(float)})
    return summary, checks


def _inner_point(low, pole, p0):
    """A positive vertex halfway between the pole and a free-boundary vertex."""
    m = low.ops.mesh
    mid = 0.5 * (m.vertices[pole] + m.vertices[p0])
    return m.nearest_vertex(mid)


def cmd_sweep(cfg, out, args):
    m = cfg.build_mesh()
    tfs, flags = cfg.test_function_fields()
    prepared = prepare_ambient(m, m.nearest_vertex(cfg.x0), cfg.ambient_radius)
    sw = mvs_sweep(None, None, cfg.radii, test_functions=tfs, jobs=args.jobs,
                   prepared=prepared, tol=cfg.tol("psor"))
    amb = prepared[0]
    header, rows = sw.rows()
    io.write_csv(out / "sweep.csv", header, rows)
    fields = {f"D_r{k}": d.members.astype(float) for k, d in enumerate(sw.sets)}
    io.write_vtk(out / "sweep.vtk", amb, fields)
    checks = {"nestedness": sw.nestedness_pass, "monotone_volume": sw.monotonicity_pass}
    verdicts = {}
    for name, u in tfs.items():
        try:
            v = mvt_verify(u, sw, subharmonic=flags[name],
                           harmonic_tol=cfg.tol("harmonic_spread"))
        except ParameterError as exc:
            verdicts[name] = {"error": str(exc)}
            checks[f"mvt_{name}"] = False
            continue
        verdicts[name] = {"layer_recedes": v.recede_pass, "averages_ok": v.average_pass, "limit": v.limit_pass,
                          "spread": v.spread, "averages": v.averages}
        checks[f"mvt_{name}"] = v.passed
    summary = {**_snap_info(amb, cfg.x0, sw.x0), "radii": sw.radii,
               "volumes": [d.volume for d in sw.sets],
               "touches_boundary": [d.touches_boundary for d in sw.sets],
               "witnesses": sw.witnesses, "mvt": verdicts}
    return summary, checks


def cmd_key_estimate(cfg, out, args):
    m = cfg.build_mesh()
    ops = assemble_operators(m)
    p = m.nearest_vertex(cfg.x0)
    fit = key_estimate_fit(m, ops, p, rho_max=cfg.key_estimate.get("rho_max", 0.3))
    io.write_csv(out / "key_estimate.csv", ["rho", "measured", "fitted"], fit.rows())
    summary = {**_snap_info(m, cfg.x0, p), "a0": fit.a0, "a2": fit.a2, "residual": fit.residual,
               "remainder_ratio": fit.remainder_ratio, "coefficients": fit.coefficient_report()}
    checks = {"a0": abs(fit.a0 - 4.0) <= 0.05}
    k = m.curvature or 0.0
    if k:
        checks["a2_sign"] = np.sign(fit.a2) == -np.sign(k)
    else:
        checks["a2_flat"] = abs(fit.a2) <= 0.2
    return summary, checks


def cmd_harnack(cfg, out, args):
    m = cfg.build_mesh()
    p = m.nearest_vertex(cfg.x0)
    s = cfg.harnack.get("s", 0.25)
    ens = harnack_ensemble(m, p, s, cfg.harnack.get("samples", 20), seed=args.seed,
                           jobs=args.jobs)
    io.write_csv(out / "harnack.csv", ["sample", "sup", "inf", "ratio", "C"],
                 [(k, r.sup_val, r.inf_val, r.ratio, r.constant)
                  for k, r in enumerate(ens.reports)])
    # data in [1, 2] caps every ratio at 2 by the maximum principle
    summary = {**_snap_info(m, cfg.x0, p), "s": s, "seed": args.seed,
               "uniform_constant": ens.uniform_constant, "max_ratio": max(ens.ratios),
               "accepted_samples": len(ens.reports)}
    return summary, {"uniform_bound": ens.bounded_by(ens.uniform_constant) and max(ens.ratios) <= 2}


def cmd_r0(cfg, out, args):
    m = cfg.build_mesh()
    p = m.nearest_vertex(cfg.x0)
    rep = r0_search(m, p, cfg.tol("r0"))
    summary = {**_snap_info(m, cfg.x0, p), "r_in": rep.r_in, "r_out": rep.r_out,
               "boundary_gap": rep.boundary_gap, "capped": rep.capped,
               "evaluations": rep.evaluations}
    return summary, {"bracketed": not rep.capped}


def cmd_nonparabolic(cfg, out, args):
    if cfg.geometry["tag"] != HYPERBOLIC:
        raise ConfigError("nonparabolic probe needs the hyperbolic-poincare geometry")
    radii = cfg.nonparabolic.get("radii", [0.5, 1.0, 2.0, 4.0])
    tab = nonparabolic_boundedness_probe(radii, h=cfg.mesh_h,
                                         max_ambient=cfg.nonparabolic.get("max_ambient", 4.0))
    io.write_csv(out / "nonparabolic.csv",
                 ["r", "circumradius", "flat_prediction", "hyperbolic_prediction", "volume",
                  "ambient_radius", "stabilized"],
                 [(row.r, row.circumradius, row.flat_prediction, row.hyperbolic_prediction,
                   row.volume, row.ambient_radius, row.stabilized) for row in tab.rows])
    errs = tab.volume_errors()
    summary = {"volume_errors": errs}
    return summary, {"sublinear": tab.sublinear(), "volume_identity": max(errs) <= 0.03,
                     "stabilized": all(row.stabilized for row in tab.rows)}


def cmd_verify(cfg, out, args):
    selected = cfg.verify.get("criteria")
    results = acceptance.run_acceptance(selected, acceptance.Context(cfg.mesh_h), echo=print)
    for r in results:
        log.info("criterion %d wall time %.2fs", r.number, r.seconds)
    summary = acceptance.verdict(results)
    return summary, {f"criterion_{r.number}": r.passed for r in results}


COMMANDS = {
    "mesh": cmd_mesh, "green": cmd_green, "membrane": cmd_membrane, "sweep": cmd_sweep,
    "key-estimate": cmd_key_estimate, "harnack": cmd_harnack, "r0": cmd_r0,
    "nonparabolic": cmd_nonparabolic, "verify": cmd_verify,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="mvsetlab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--output", help="output directory (overrides the config)")
        p.add_argument("--jobs", type=int, default=1, help="concurrent solves")
        p.add_argument("--seed", type=int, default=None, help="seed for random samplers")
    return parser


def _setup_logging(out):
    level = os.environ.get("MVSETLAB_LOG", "WARNING").upper()
    root = logging.getLogger("mvsetlab")
    root.setLevel(logging.DEBUG)
    root.handlers.clear()
    console = logging.StreamHandler(sys.stderr)
    console.setLevel(getattr(logging, level, logging.WARNING))
    console.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root.addHandler(console)
    if out is not None:
        fh = logging.FileHandler(out / "run.log", mode="w")
        fh.setLevel(logging.INFO)
        fh.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
        root.addHandler(fh)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.jobs < 1:
        parser.error("--jobs must be at least 1")
    _setup_logging(None)
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    args.seed = cfg.seed if args.seed is None else args.seed
    out = Path(args.output or (cfg.base_dir / cfg.output_dir))
    out.mkdir(parents=True, exist_ok=True)
    _setup_logging(out)
    t0 = time.perf_counter()
    try:
        summary, checks = COMMANDS[args.command](cfg, out, args)
    except ParameterError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except MVSetLabError as exc:
        log.error("numerical failure: %s", exc)
        io.write_json(out / "verdict.json", {"command": args.command, "passed": False,
                                             "error": f"{type(exc).__name__}: {exc}"})
        print(f"numerical failure: {exc} (see {out / 'verdict.json'})", file=sys.stderr)
        return 1
    passed = all(bool(v) for v in checks.values())
    io.write_json(out / "summary.json", summary)
    io.write_json(out / "verdict.json", {"command": args.command, "passed": passed,
                                         "checks": checks})
    log.info("%s finished in %.2fs", args.command, time.perf_counter() - t0)
    print(f"{args.command}: {'PASS' if passed else 'FAIL'} ({out / 'verdict.json'})")
    return 0 if passed else 1


if __name__ == "__main__":
    sys.exit(main())
