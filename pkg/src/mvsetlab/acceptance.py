"""The acceptance suite: each criterion at its stated tolerance.

Every check returns a ``CriterionResult``; ``run_acceptance`` evaluates a
selection of them against a shared context so the flat-disk run at
``h = 0.01`` is built only once.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .estimates import key_estimate_fit
from .green import green_function
from .manifold import (FLAT, HYPERBOLIC, SPHERE, assemble_operators, build_builtin,
                       interval_mesh)
from .meanvalue import (domain_invariance, mvs_sweep, mvt_verify, nonparabolic_boundedness_probe,
                        r0_extrapolated)
from .obstacle import (band_regularity, free_boundary_census, membrane_continuity,
                       membrane_gap_view, probe_nondegeneracy, solve_lower_obstacle,
                       solve_membrane)
from .solvers import SparseSystem, cg_solve, psor_lcp

log = logging.getLogger(__name__)

SQRT_PI = math.sqrt(math.pi)


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    summary: str
    details: dict = field(default_factory=dict)
    seconds: float = 0.0
    time_limit: float | None = None

    def line(self):
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] {self.number:2d} {self.name}: {self.summary}"


class Context:
    """Shared flat-disk ambient (R = 1, x0 at the centre) at a given h."""

    def __init__(self, h=0.01):
        self.h = h

    @cached_property
    def mesh(self):
        return build_builtin(FLAT, {"shape": "disk", "radius": 1.0}, self.h)

    @cached_property
    def ops(self):
        return assemble_operators(self.mesh)

    @cached_property
    def green(self):
        return green_function(self.ops, self.mesh.nearest_vertex((0.0, 0.0)))

    @cached_property
    def sweep(self):
        tf = {"x": lambda m: m.vertices[:, 0].copy(),
              "r2": lambda m: np.sum(m.vertices ** 2, axis=1)}
        return mvs_sweep(self.mesh, self.green.pole, [0.2, 0.3, 0.4, 0.5], test_functions=tf,
                         prepared=(self.mesh, self.ops, self.green))

    def set_at(self, r):
        return self.sweep.sets[self.sweep.radii.index(r)]

    def solution_at(self, r):
        return self.sweep.solutions[self.sweep.radii.index(r)]


def _timed(fn):
    def wrapper(ctx):
        t0 = time.perf_counter()
        res = fn(ctx)
        res.seconds = time.perf_counter() - t0
        if res.time_limit is not None and res.seconds > res.time_limit:
            res.passed = False
            res.summary += f" (runtime {res.seconds:.1f}s over {res.time_limit:.0f}s)"
        return res
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


@_timed
def volume_identity(ctx):
    errs = {}
    for r in (0.2, 0.3, 0.5):
        d = ctx.set_at(r)
        errs[r] = d.volume / r ** 2 - 1.0
    worst = max(abs(e) for e in errs.values())
    summary = "rel. errors " + ", ".join(f"r={r:g}: {e:+.2%}" for r, e in errs.items())
    return CriterionResult(1, "volume identity |D| = r^2 within 2%", worst <= 0.02, summary,
                           {"relative_errors": errs, "tolerance": 0.02,
                            "load_volume_errors": {r: ctx.set_at(r).load_volume / r ** 2 - 1
                                                   for r in errs}},
                           time_limit=60.0)


@_timed
def disk_shape(ctx):
    d = ctx.set_at(0.5)
    rho = 0.5 / SQRT_PI
    disk = np.linalg.norm(ctx.mesh.vertices, axis=1) < rho
    sd = float(np.sum(ctx.ops.lumped_mass[disk ^ d.members]))
    tol = 2 * ctx.h * 2 * math.pi * rho
    return CriterionResult(2, "D(0.5) is the disk of radius 0.28209", sd <= tol,
                           f"sym. diff {sd:.4g} <= {tol:.4g}", {"symdiff": sd, "tolerance": tol})


@_timed
def mean_value_equality(ctx):
    sw = ctx.sweep
    harm = mvt_verify(lambda m: m.vertices[:, 0].copy(), sw)
    u0 = float(ctx.mesh.vertices[sw.x0, 0])
    dev = max(abs(a - u0) for a in harm.averages)
    sub = mvt_verify(lambda m: np.sum(m.vertices ** 2, axis=1), sw, subharmonic=True)
    ok = dev <= 1e-3 and sub.average_pass
    return CriterionResult(3, "harmonic averages equal u(x0); subharmonic monotone", ok,
                           f"max |avg - u(x0)| = {dev:.2e}; |x|^2 averages "
                           f"{'increasing' if sub.average_pass else 'NOT monotone'}",
                           {"harmonic_deviation": dev, "subharmonic_averages": sub.averages})


@_timed
def nestedness(ctx):
    sw = ctx.sweep
    n_wit = sum(len(w[2]) for w in sw.witnesses)
    return CriterionResult(4, "nestedness (members + 1-ring)", sw.nestedness_pass,
                           f"{n_wit} witnesses over {len(sw.radii) - 1} consecutive pairs",
                           {"witnesses": sw.witnesses})


@_timed
def domain_uniqueness(ctx):
    square = build_builtin(FLAT, {"shape": "square", "side": 4.0, "center": (0.0, 0.0)}, ctx.h)
    rep = domain_invariance((0.0, 0.0), 0.5, ctx.mesh, square)
    return CriterionResult(5, "disk vs square ambients agree", rep.passed,
                           f"sym. diff {rep.symdiff_volume:.4g} <= {rep.tolerance:.4g}",
                           {"symdiff": rep.symdiff_volume, "tolerance": rep.tolerance})


@_timed
def maximal_radius(ctx):
    rep = r0_extrapolated(lambda h: build_builtin(FLAT, {"shape": "disk", "radius": 1.0}, h),
                          (0.0, 0.0), (0.02, 0.01), 0.004)
    ok = rep.r_in <= SQRT_PI <= rep.r_out and rep.width <= 0.02
    raw = "; ".join(f"h={h:g}: [{a:.4f}, {b:.4f}]" for h, (a, b) in zip(rep.hs, rep.brackets))
    return CriterionResult(6, "r0 bracket contains sqrt(pi), width <= 0.02", ok,
                           f"extrapolated [{rep.r_in:.4f}, {rep.r_out:.4f}] "
                           f"(width {rep.width:.4f}); raw {raw}",
                           {"bracket": (rep.r_in, rep.r_out), "estimate": rep.estimate,
                            "raw_brackets": rep.brackets, "hs": rep.hs}, time_limit=180.0)


def _key_fit(tag, h):
    if tag == FLAT:
        m = build_builtin(FLAT, {"shape": "disk", "radius": 0.6}, h)
    else:
        # lam = 2 at the chart origin: halve the chart spacing for metric h
        m = build_builtin(tag, {"chart_radius": 0.3}, h / 2)
    ops = assemble_operators(m)
    return key_estimate_fit(m, ops, m.nearest_vertex((0.0, 0.0)))


@_timed
def key_estimate(ctx):
    fits = {tag: _key_fit(tag, ctx.h) for tag in (FLAT, SPHERE, HYPERBOLIC)}
    ok = all(abs(f.a0 - 4.0) <= 0.05 for f in fits.values())
    ok &= abs(fits[FLAT].a2) <= 0.2
    ok &= fits[SPHERE].a2 < 0 < fits[HYPERBOLIC].a2
    for tag in (SPHERE, HYPERBOLIC):
        ok &= abs(abs(fits[tag].a2) - 2 / 3) <= 0.1 * 2 / 3
    summary = "; ".join(f"{tag}: a0={f.a0:.4f} a2={f.a2:+.4f}" for tag, f in fits.items())
    support = {tag: fits[tag].coefficient_report()["supported"] for tag in (SPHERE, HYPERBOLIC)}
    summary += f"; data supports Ric coefficient {support[SPHERE]} (sphere), {support[HYPERBOLIC]} (hyperbolic)"
    return CriterionResult(7, "Key Estimate expansion", bool(ok), summary,
                           {tag: {"a0": f.a0, "a2": f.a2, "remainder_ratio": f.remainder_ratio,
                                  "coefficients": f.coefficient_report()}
                            for tag, f in fits.items()})


def obstacle_fixture_1d(h=1 / 8):
    """``W = (|x| - 1/2)^2 / 2`` outside ``[-1/2, 1/2]`` on ``[-1, 1]`` with ``f = 1``."""
    m = interval_mesh(-1.0, 1.0, int(round(2 / h)))
    ops = assemble_operators(m)
    exact = 0.5 * np.maximum(np.abs(m.x) - 0.5, 0.0) ** 2
    sol = solve_lower_obstacle(ops, 1.0, h=exact)
    return sol, exact


@_timed
def nondegeneracy(ctx):
    low = membrane_gap_view(ctx.solution_at(0.5))
    radii = [2 * ctx.h, 4 * ctx.h, 8 * ctx.h]
    pts = [(0.1, 0.0), (0.0, 0.15), (-0.2, 0.0), (0.12, -0.12), (0.0, -0.25)]
    consts = []
    for xy in pts:
        rep = probe_nondegeneracy(low, ctx.mesh.nearest_vertex(xy), radii)
        consts.append(rep.c_nd)
    cmin = float(min(consts))
    fixture, exact = obstacle_fixture_1d()
    err = float(np.max(np.abs(fixture.values - exact)))
    ok = cmin >= 0.2 * 0.9 and err <= 1e-6
    return CriterionResult(8, "nondegeneracy constant >= 1/(2n+1)", ok,
                           f"min C_ND = {cmin:.3f} (>= 0.18); 1-D fixture error {err:.1e}",
                           {"constants": consts, "fixture_error": err})


@_timed
def optimal_regularity(ctx):
    rep = band_regularity(ctx.solution_at(0.5), [2 * ctx.h, 4 * ctx.h, 8 * ctx.h])
    ok = abs(rep.exponent - 2.0) <= 0.1
    return CriterionResult(9, "optimal regularity exponent 2.0 +- 0.1", ok,
                           f"pooled exponent {rep.exponent:.3f} over {len(rep.vertices)} "
                           f"free-boundary vertices (per-vertex sd {rep.spread:.2f})",
                           {"exponent": rep.exponent, "n_vertices": len(rep.vertices)})


@_timed
def membrane_continuity_check(ctx):
    s_list = [0.3, 0.4, 0.45, 0.49, 0.51, 0.55, 0.6, 0.8, 10.0]
    table = membrane_continuity(ctx.ops, ctx.green, 0.5, s_list, base=ctx.solution_at(0.5))
    w10 = table.rows[-1][2]
    bound = 1.0 / (4 * 10.0 ** 2)
    ok = table.monotone_to_r() and table.barrier_holds() and w10 <= bound
    return CriterionResult(10, "membrane continuity and barrier", ok,
                           f"gaps monotone: {table.monotone_to_r()}; w_s <= H_s: "
                           f"{table.barrier_holds()}; max w_10 = {w10:.10g} vs {bound:g} "
                           f"(excess {w10 - bound:+.2e})",
                           {"rows": table.rows, "bound": bound})


@_timed
def census(ctx):
    sols = []
    for h in (0.02, 0.01, 0.005):
        if h == ctx.h:
            sols.append(ctx.solution_at(0.5))
            continue
        m = build_builtin(FLAT, {"shape": "disk", "radius": 1.0}, h)
        ops = assemble_operators(m)
        sols.append(solve_membrane(ops, green_function(ops, m.nearest_vertex((0.0, 0.0))), 0.5))
    rep = free_boundary_census(sols, hs=[0.02, 0.01, 0.005])
    ok = rep.slope is not None and abs(rep.slope - 1.0) <= 0.2
    return CriterionResult(11, "free-boundary census slope 1.0 +- 0.2", ok,
                           f"slope {rep.slope:.3f}; counts {list(map(int, rep.n_fb))}",
                           {"slope": rep.slope, "counts": rep.n_fb})


def hyperbolic_h(r):
    """Chart spacing for the hyperbolic probe at parameter ``r``."""
    return 0.004 if r <= 1 else 0.006


@_timed
def nonparabolic(ctx):
    tab = nonparabolic_boundedness_probe([0.5, 1.0, 2.0, 4.0], h_rule=hyperbolic_h)
    errs = tab.volume_errors()
    ok = tab.sublinear() and max(errs) <= 0.03 and all(row.stabilized for row in tab.rows)
    summary = "; ".join(f"r={row.r:g}: R_c={row.circumradius:.3f} vol err {e:.2%}"
                        for row, e in zip(tab.rows, errs))
    return CriterionResult(12, "hyperbolic mean value sets bounded, sublinear", ok,
                           f"sublinear: {tab.sublinear()}; {summary}",
                           {"rows": [row.__dict__ for row in tab.rows]})


@_timed
def solver_properties(ctx):
    m = build_builtin(FLAT, {"shape": "disk", "radius": 1.0}, 0.05)
    ops = assemble_operators(m)
    g = green_function(ops, m.nearest_vertex((0.0, 0.0)))
    tol = 1e-10
    sols = [solve_membrane(ops, g, 0.5, omega=om, tol=tol, method="psor", track_energy=True)
            for om in (1.0, 1.5, 1.9)]
    b = 0.5 ** -2 * ops.lumped_mass[ops.interior_index]
    scale = b.max() / ops.interior_block.diagonal().min()
    spread = max(float(np.max(np.abs(s.values - sols[0].values))) for s in sols)
    omega_ok = spread <= 10 * tol * scale
    energy_ok = all(s.report.energy_monotone() for s in sols)
    system = SparseSystem(ops.interior_block, b)
    w_psor, _ = psor_lcp(system, tol=1e-12)
    w_cg = cg_solve(system, tol=1e-12)
    cg_gap = float(np.max(np.abs(w_psor - w_cg)) / np.max(np.abs(w_cg)))
    cg_ok = cg_gap <= 1e-8
    ok = omega_ok and energy_ok and cg_ok
    return CriterionResult(13, "PSOR omega-independence, energy descent, CG agreement", ok,
                           f"omega spread {spread:.1e} (<= {10 * tol * scale:.1e}); energy "
                           f"monotone {energy_ok}; |PSOR - CG|/|CG| = {cg_gap:.1e}",
                           {"omega_spread": spread, "energy_monotone": energy_ok,
                            "cg_gap": cg_gap, "sweeps": [s.report.iterations for s in sols]})


CRITERIA = {
    1: volume_identity, 2: disk_shape, 3: mean_value_equality, 4: nestedness,
    5: domain_uniqueness, 6: maximal_radius, 7: key_estimate, 8: nondegeneracy,
    9: optimal_regularity, 10: membrane_continuity_check, 11: census, 12: nonparabolic,
    13: solver_properties,
}


def run_acceptance(selected=None, ctx=None, echo=None):
    """Evaluate the chosen criteria (all by default) in numeric order."""
    ctx = Context() if ctx is None else ctx
    results = []
    for k in sorted(CRITERIA if selected is None else selected):
        res = CRITERIA[k](ctx)
        log.info("criterion %d took %.1fs", k, res.seconds)
        if echo is not None:
            echo(res.line())
        results.append(res)
    return results


def verdict(results):
    """Machine-readable verdict without wall times (those go to the log)."""
    return {"all_pass": all(r.passed for r in results),
            "criteria": [{"number": r.number, "name": r.name, "passed": r.passed,
                          "summary": r.summary.split(" (runtime")[0], "details": r.details}
                         for r in results]}
