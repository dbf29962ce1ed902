"""Membrane (upper obstacle) and lower obstacle problems, plus growth probes.

The membrane ``w_r`` minimizes ``w.A.w - 2 r^{-n} (M 1).w`` over vectors that
vanish on the boundary and stay below the Green's function.  The lower
problem minimizes ``W.A.W + 2 (M f).W`` over ``W >= 0`` with ``W = h`` on the
boundary; on ``{W > 0}`` it solves ``Delta_g W = f``.

``G - w_r`` is itself a lower-obstacle solution with ``f = r^{-n}`` (away
from the pole), which is how the probes below treat membranes.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError
from .manifold import one_ring
from .solvers import (DEFAULT_OMEGA, DEFAULT_TOL, SolveReport, SparseSystem, active_set_lcp,
                      cg_solve, psor_lcp)

log = logging.getLogger(__name__)

CONTACT_RTOL = 1e-8


@dataclass(frozen=True, eq=False)
class MembraneSolution:
    values: np.ndarray
    r_param: float
    green_ref: object = field(repr=False)
    report: SolveReport
    n: int = 2

    @property
    def ops(self):
        return self.green_ref.ops

    @property
    def load(self):
        return self.r_param ** (-self.n)

    @property
    def tau(self):
        """Contact tolerance; scaled by G away from the pole's 1-ring."""
        return CONTACT_RTOL * self.green_ref.scale_away_from_pole()

    @property
    def separation(self):
        return self.green_ref.values - self.values

    @property
    def noncontact(self):
        return self.ops.interior_mask & (self.separation > self.tau)


@dataclass(frozen=True, eq=False)
class LowerObstacleSolution:
    values: np.ndarray
    f_field: np.ndarray
    h_boundary: np.ndarray
    ops: object = field(repr=False)
    report: SolveReport | None = None
    singular: tuple = ()

    @property
    def lam(self):
        return float(np.min(self.f_field[self.ops.interior_mask]))

    @property
    def mu(self):
        return float(np.max(self.f_field[self.ops.interior_mask]))

    @property
    def tau(self):
        return CONTACT_RTOL * max(float(np.max(np.abs(self.values))), 1e-300)

    @property
    def positive(self):
        """Omega(W) restricted to interior vertices."""
        return self.ops.interior_mask & (self.values > self.tau)

    @property
    def active_set(self):
        """Lambda(W): interior vertices where W vanishes."""
        return self.ops.interior_mask & ~self.positive

    @property
    def dim(self):
        return getattr(self.ops.mesh, "dim", 2)


def _system_upper(ops, load_vec, psi):
    return SparseSystem(ops.interior_block, load_vec, upper=psi)


def solve_membrane(ops, g, r, n=None, omega=DEFAULT_OMEGA, tol=DEFAULT_TOL, warm_start=None,
                   method="active-set", track_energy=False):
    """Membrane below the Green's function for parameter ``r``.

    ``method="active-set"`` seeds PSOR with a primal-dual active set solve
    (the PSOR pass then certifies complementarity); ``"psor"`` runs plain
    PSOR from ``warm_start`` or from zero.
    """
    if not r > 0:
        raise ParameterError("r must be positive")
    n = getattr(ops.mesh, "dim", 2) if n is None else n
    idx = ops.interior_index
    b = r ** (-n) * ops.lumped_mass[idx]
    system = _system_upper(ops, b, g.values[idx])
    x0 = None if warm_start is None else np.asarray(warm_start, dtype=float)[idx]
    if method == "active-set":
        x0 = active_set_lcp(system, x0)
    elif method != "psor":
        raise ParameterError(f"unknown method {method!r}")
    w, report = psor_lcp(system, omega=omega, tol=tol, x0=x0, track_energy=track_energy)
    return MembraneSolution(ops.expand(w), float(r), g, report, n)


def membrane_gap_view(sol):
    """``G - w`` as a lower-obstacle solution with constant load ``r^{-n}``."""
    ops = sol.ops
    W = sol.separation.copy()
    W[W <= sol.tau] = 0.0
    f = np.full(ops.n, sol.load)
    return LowerObstacleSolution(W, f, np.zeros(int(np.sum(~ops.interior_mask))), ops,
                                 sol.report, singular=(sol.green_ref.pole,))


def _as_lower(sol):
    return membrane_gap_view(sol) if isinstance(sol, MembraneSolution) else sol


def solve_lower_obstacle(ops, f, h=0.0, omega=DEFAULT_OMEGA, tol=DEFAULT_TOL, method="active-set"):
    """Nonnegative minimizer of ``W.A.W + 2 (M f).W`` with ``W = h`` on the boundary."""
    f = np.broadcast_to(np.asarray(f, dtype=float), (ops.n,)).copy()
    bmask = ~ops.interior_mask
    h_full = np.broadcast_to(np.asarray(h, dtype=float), (ops.n,)).copy()
    h_b = h_full[bmask]
    if not np.all(f[ops.interior_mask] > 0):
        raise ParameterError("f must be bounded below by a positive constant")
    if not np.all(np.isfinite(f)):
        raise ParameterError("f must be bounded above")
    if np.any(h_b < 0):
        raise ParameterError("boundary data h must be nonnegative")
    coupling, bidx = ops.boundary_coupling
    idx = ops.interior_index
    rhs = -ops.lumped_mass[idx] * f[idx] - coupling @ h_b
    lower = np.zeros(len(idx))
    if method == "active-set":
        # mirror into the upper-bound form the active set routine expects
        x0 = -active_set_lcp(SparseSystem(ops.interior_block, -rhs, upper=-lower))
    else:
        x0 = None
    W, report = psor_lcp(SparseSystem(ops.interior_block, rhs, lower=lower),
                         omega=omega, tol=tol, x0=x0)
    full = ops.expand(W, h_b)
    return LowerObstacleSolution(full, f, h_b, ops, report)


# ---------------------------------------------------------------------------
# complementarity


@dataclass
class GapReport:
    classes: np.ndarray          # 0 contact interior, 1 noncontact, 2 free-boundary layer, -1 other
    gap_contact: float
    gap_noncontact: float
    gap_layer: float
    flagged: list
    layer_width: int

    @property
    def no_gap(self):
        return not self.flagged

    def counts(self):
        return {name: int(np.sum(self.classes == k))
                for k, name in enumerate(("contact", "noncontact", "layer"))}


def free_boundary_band(sol):
    """Contact vertices with a noncontact neighbour plus the converse."""
    sol = _as_lower(sol)
    pos = sol.positive
    act = sol.active_set
    adj = sol.ops.mesh.adjacency
    near_pos = adj @ pos.astype(float) > 0
    near_act = adj @ act.astype(float) > 0
    return (act & near_pos) | (pos & near_act)


def load_ratio(sol):
    """Discrete ``Delta_g W / f`` at interior vertices (NaN elsewhere)."""
    sol = _as_lower(sol)
    ops = sol.ops
    q = -(ops.stiffness @ sol.values) / (ops.lumped_mass * sol.f_field)
    q[~ops.interior_mask] = np.nan
    for s in sol.singular:
        q[s] = np.nan
    return q


def check_complementarity(sol, tol=1e-6):
    """Classify vertices and check ``Delta W = chi_{W>0} f`` off the free-boundary layer.

    Inside the layer only one-sided bounds are required: ``0 <= Delta W <= mu``.
    """
    low = _as_lower(sol)
    ops = low.ops
    q = load_ratio(low)
    band = free_boundary_band(low)
    valid = ops.interior_mask & np.isfinite(q)
    classes = np.full(ops.n, -1)
    classes[valid & low.active_set & ~band] = 0
    classes[valid & low.positive & ~band] = 1
    classes[valid & band] = 2

    dev_contact = np.where(classes == 0, np.abs(q), 0.0)
    dev_non = np.where(classes == 1, np.abs(q - 1.0), 0.0)
    upper = low.mu / low.f_field
    dev_layer = np.where(classes == 2, np.maximum(np.maximum(-q, q - upper), 0.0), 0.0)
    # noncontact vertices of the layer still carry the full load
    dev_layer = np.where((classes == 2) & low.positive, np.abs(q - 1.0), dev_layer)
    flagged = np.flatnonzero((dev_contact > tol) | (dev_non > tol) | (dev_layer > tol))

    # vertices carrying a fractional load must sit next to the other phase
    partial = valid & (np.abs(q) > tol) & (np.abs(q - 1.0) > tol)
    width = 0 if not partial.any() else (1 if np.all(band[partial]) else 3)
    if band.any():
        width = max(width, 2)
    return GapReport(classes, float(dev_contact.max(initial=0.0)), float(dev_non.max(initial=0.0)),
                     float(dev_layer.max(initial=0.0)), [int(i) for i in flagged], width)


# ---------------------------------------------------------------------------
# growth probes


def _ball_sup(values, dist, s, exclude=()):
    mask = dist <= s * (1 + 1e-9) + 1e-14
    for e in exclude:
        mask[e] = False
    return float(np.max(values[mask]))


@dataclass
class RegularityFit:
    exponent: float
    prefactor: float
    constant: float
    radii: np.ndarray
    sups: np.ndarray
    global_bound: float

    def rows(self, mu=1.0):
        bound = self.constant * mu * self.radii ** 2
        return [(float(s), float(S), float(b), bool(S <= b * (1 + 1e-12)))
                for s, S, b in zip(self.radii, self.sups, bound)]


def _compact_interior(low):
    ops = low.ops
    inner = ~one_ring(ops.mesh, ~ops.interior_mask)
    inner = ~one_ring(ops.mesh, ~inner)
    for s in low.singular:
        ring = np.zeros(ops.n, dtype=bool)
        ring[s] = True
        inner &= ~one_ring(ops.mesh, ring)
    return inner


def probe_optimal_regularity(sol, p0, radii):
    """Fit ``sup_{B_p0(s)} W ~ C s^alpha`` from a free-boundary vertex.

    ``constant`` is ``max_s sup W / (mu s^2)``; ``global_bound`` is the max of
    W over vertices two layers inside the boundary (singular 1-ring removed).
    """
    low = _as_lower(sol)
    band = free_boundary_band(low)
    if not band.any():
        raise ParameterError("solution has no free boundary to probe")
    p0 = int(p0)
    if not band[p0]:
        raise ParameterError(f"vertex {p0} is not on the discrete free boundary")
    radii = np.asarray(sorted(radii), dtype=float)
    dist = low.ops.mesh.distances_from(p0)
    sups = np.array([_ball_sup(low.values, dist, s, low.singular) for s in radii])
    ok = sups > 0
    if ok.sum() < 2:
        raise ParameterError("need at least two radii with positive sup to fit")
    slope, icpt = np.polyfit(np.log(radii[ok]), np.log(sups[ok]), 1)
    constant = float(np.max(sups[ok] / (low.mu * radii[ok] ** 2)))
    compact = _compact_interior(low)
    gbound = float(np.max(low.values[compact], initial=0.0))
    return RegularityFit(float(slope), float(np.exp(icpt)), constant, radii, sups, gbound)


@dataclass
class BandRegularity:
    exponent: float
    per_vertex: np.ndarray
    vertices: np.ndarray
    radii: np.ndarray

    @property
    def spread(self):
        return float(np.std(self.per_vertex))


def band_regularity(sol, radii):
    """Detachment exponent pooled over every free-boundary band vertex.

    Single vertices sit up to half a cell off the continuum free boundary,
    which tilts their individual fits in opposite directions on the two
    sides; the pooled slope of the mean ``log sup`` cancels that offset.
    """
    low = _as_lower(sol)
    band = np.flatnonzero(free_boundary_band(low))
    if not len(band):
        raise ParameterError("solution has no free boundary to probe")
    fits = [probe_optimal_regularity(low, p, radii) for p in band]
    radii = fits[0].radii
    logs = np.array([np.log(f.sups) for f in fits])
    slope = float(np.polyfit(np.log(radii), logs.mean(axis=0), 1)[0])
    return BandRegularity(slope, np.array([f.exponent for f in fits]), band, radii)


@dataclass
class NondegeneracyReport:
    rows: list                 # (s, T(s), bound, pass)
    c_nd: float
    c_gn: float | None
    dim: int

    @property
    def passed(self):
        return all(r[3] for r in self.rows)


def probe_nondegeneracy(sol, p, radii, r_nd=np.inf, rtol=1e-9):
    """Measure ``T(s) = sup_{B_p(s)} W - W(p)`` against ``lambda s^2 / (2n + 1)``.

    For ``s <= r_nd`` each row passes when the quadratic bound holds; beyond
    ``r_nd`` only positivity is required and the linear constant
    ``min T / (lambda s)`` is reported.
    """
    low = _as_lower(sol)
    p = int(p)
    pos = low.positive
    if not (pos[p] or (low.ops.mesh.adjacency[p].indices.size and pos[low.ops.mesh.adjacency[p].indices].any())):
        raise ParameterError(f"vertex {p} lies deep inside the contact set")
    n = low.dim
    lam = low.lam
    dist = low.ops.mesh.distances_from(p)
    rows, c_nd, c_gn = [], np.inf, np.inf
    for s in sorted(float(x) for x in radii):
        T = 0.0 if s == 0 else _ball_sup(low.values, dist, s, low.singular) - low.values[p]
        if s <= r_nd:
            bound = lam * s * s / (2 * n + 1)
            ok = T >= bound * (1 - rtol)
            if s > 0:
                c_nd = min(c_nd, T / (lam * s * s))
        else:
            bound = 0.0
            ok = T > 0
            c_gn = min(c_gn, T / (lam * s))
        rows.append((s, float(T), float(bound), bool(ok)))
    return NondegeneracyReport(rows, float(c_nd), None if np.isinf(c_gn) else float(c_gn), n)


@dataclass
class CensusReport:
    hs: np.ndarray
    n_fb: np.ndarray
    n_interior: np.ndarray
    area_fraction: np.ndarray
    slope: float | None


def free_boundary_census(solutions, hs=None):
    """Free-boundary layer vertex counts across resolutions and their scaling slope."""
    if len(solutions) < 3:
        raise ParameterError("census needs at least three resolutions")
    lows = [_as_lower(s) for s in solutions]
    hs = np.array([lo.ops.mesh.mesh_size() for lo in lows] if hs is None else hs, dtype=float)
    n_fb = np.array([int(free_boundary_band(lo).sum()) for lo in lows])
    n_int = np.array([int(lo.ops.interior_mask.sum()) for lo in lows])
    areas = np.array([float(lo.ops.lumped_mass.sum()) for lo in lows])
    frac = n_fb * hs ** 2 / areas
    slope = None
    if np.all(n_fb > 0):
        slope = float(np.polyfit(np.log(1.0 / hs), np.log(n_fb), 1)[0])
    return CensusReport(hs, n_fb, n_int, frac, slope)


@dataclass
class ContinuityTable:
    r: float
    rows: list                  # (s, max|w_s - w_r|, max w_s, max barrier H_s)

    def monotone_to_r(self):
        """Gaps shrink as s approaches r from each side."""
        ok = True
        for side in (1, -1):
            pts = sorted((abs(s - self.r), gap) for s, gap, *_ in self.rows if side * (s - self.r) > 0)
            gaps = [g for _, g in pts]
            ok &= all(a < b for a, b in zip(gaps, gaps[1:]))
        return bool(ok)

    def barrier_holds(self):
        return all(ws <= hs * (1 + 1e-12) + 1e-15 for _, _, ws, hs in self.rows)


def torsion_barrier(ops, s, n=None):
    """``H_s`` with ``Delta_g H = -s^{-n}``, zero on the boundary."""
    n = getattr(ops.mesh, "dim", 2) if n is None else n
    idx = ops.interior_index
    H = cg_solve(SparseSystem(ops.interior_block, s ** (-n) * ops.lumped_mass[idx]), tol=1e-12)
    return ops.expand(H)


def membrane_continuity(ops, g, r, s_list, base=None, **solve_kw):
    """Sup-norm gaps ``|w_s - w_r|`` and the torsion barrier for each ``s``."""
    base = solve_membrane(ops, g, r, **solve_kw) if base is None else base
    rows = []
    for s in s_list:
        if s == r:
            rows.append((float(s), 0.0, float(base.values.max()), float(torsion_barrier(ops, s).max())))
            continue
        ws = solve_membrane(ops, g, s, warm_start=base.values, **solve_kw)
        rows.append((float(s), float(np.max(np.abs(ws.values - base.values))),
                     float(ws.values.max()), float(torsion_barrier(ops, s).max())))
    return ContinuityTable(float(r), rows)
