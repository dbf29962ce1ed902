"""Mean value sets as noncontact sets of membranes, and checks of their properties."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.csgraph import dijkstra
from scipy.spatial import cKDTree

from .errors import ExtractionError, ParameterError, PreconditionError
from .green import green_function
from .manifold import (HYPERBOLIC, assemble_operators, build_builtin, one_ring,
                       restrict_submanifold)
from .obstacle import solve_membrane

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class MeanValueSet:
    members: np.ndarray           # boolean mask over the ambient's vertices
    x0: int
    r_param: float
    volume: float
    touches_boundary: bool
    ops: object = field(repr=False)
    load_volume: float = float("nan")

    @property
    def member_vertices(self):
        return np.flatnonzero(self.members)

    @property
    def mesh(self):
        return self.ops.mesh

    def edge_layer(self):
        """Members with at least one non-member neighbour."""
        outside = ~self.members
        return self.members & (self.mesh.adjacency @ outside.astype(float) > 0)

    def circumradius(self):
        return float(np.max(self.mesh.distances_from(self.x0)[self.members]))


def extract_mvs(sol):
    """Noncontact set ``{G - w > tau}`` of a membrane solution.

    ``load_volume`` weights each vertex by the fraction of the load that
    ``w`` carries there; it equals ``r^n`` to rounding whenever the set
    stays away from the boundary.
    """
    ops = sol.ops
    members = sol.noncontact.copy()
    if not members.any():
        raise ExtractionError(f"empty noncontact set at r={sol.r_param}")
    pole = sol.green_ref.pole
    if not members[pole]:
        raise ExtractionError("pole is not in the noncontact set")
    near_boundary = ops.mesh.adjacency @ (~ops.interior_mask).astype(float) > 0
    touches = bool(np.any(members & near_boundary))
    # fraction of the load r^{-n} M_i that w carries at each vertex: 1 off the
    # contact set, 0 deep inside it, in between on the contact layer
    frac = (ops.stiffness @ sol.values) / (sol.load * ops.lumped_mass)
    frac = np.clip(np.where(ops.interior_mask, frac, 0.0), 0.0, 1.0)
    load_volume = float(np.sum(ops.lumped_mass * frac))
    return MeanValueSet(members, int(pole), float(sol.r_param),
                        float(np.sum(ops.lumped_mass[members])), touches, ops, load_volume)


def mean_value_average(u, d, ops=None):
    """Lumped-mass average of ``u`` over the members of ``d``."""
    ops = d.ops if ops is None else ops
    u = np.asarray(u, dtype=float)
    m = ops.lumped_mass[d.members]
    return float(np.sum(m * u[d.members]) / d.volume)


@dataclass
class SweepReport:
    radii: list
    sets: list
    averages: dict
    nestedness_pass: bool
    monotonicity_pass: bool
    limit_value: dict
    witnesses: list = field(default_factory=list)
    ops: object = field(default=None, repr=False)
    green: object = field(default=None, repr=False)
    solutions: list = field(default_factory=list, repr=False)
    x0: int = 0

    def rows(self):
        names = sorted(self.averages)
        out = []
        for k, (r, d) in enumerate(zip(self.radii, self.sets)):
            out.append([r, d.volume, r ** 2, d.touches_boundary] +
                       [self.averages[nm][k] for nm in names])
        return ["r", "volume", "r_squared", "touches_boundary"] + [f"avg_{nm}" for nm in names], out


def _snap(mesh, x0):
    if isinstance(x0, (int, np.integer)):
        return int(x0)
    return mesh.nearest_vertex(x0)


def prepare_ambient(m, x0, ambient_radius=None):
    """Restrict ``m`` to the ball about ``x0`` (if asked) and build ops and G."""
    x0 = _snap(m, x0)
    if ambient_radius is not None:
        sub = restrict_submanifold(m, x0, ambient_radius)
        x0 = sub.nearest_vertex(m.vertices[x0])
        m = sub
    ops = assemble_operators(m)
    return m, ops, green_function(ops, x0)


def check_nested(sets):
    """Member set plus its 1-ring of each D(r) must lie inside the next D(s)."""
    witnesses = []
    for a, b in zip(sets, sets[1:]):
        bad = one_ring(a.mesh, a.members) & ~b.members
        if bad.any():
            witnesses.append((a.r_param, b.r_param, [int(i) for i in np.flatnonzero(bad)[:50]]))
    return witnesses


def mvs_sweep(m, x0, r_list, ambient_radius=None, test_functions=None, jobs=1, warm=True,
              prepared=None, **solve_kw):
    """Mean value sets for increasing radii on one ambient.

    Membranes are warm-started from the previous radius unless ``jobs > 1``,
    in which case radii are solved concurrently.
    """
    radii = [float(r) for r in r_list]
    if any(b <= a for a, b in zip(radii, radii[1:])):
        raise ParameterError("radii must be strictly increasing")
    m, ops, g = prepare_ambient(m, x0, ambient_radius) if prepared is None else prepared
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            sols = list(pool.map(lambda r: solve_membrane(ops, g, r, **solve_kw), radii))
    else:
        sols, prev = [], None
        for r in radii:
            sol = solve_membrane(ops, g, r, warm_start=prev if warm else None, **solve_kw)
            sols.append(sol)
            prev = sol.values
    sets = [extract_mvs(s) for s in sols]
    for d in sets:
        if d.touches_boundary:
            log.warning("D(%g) touches the ambient boundary; enlarge the ambient", d.r_param)
    witnesses = check_nested(sets)
    vols = [d.volume for d in sets]
    monotone = all(b > a for a, b in zip(vols, vols[1:]))
    averages = {}
    for name, u in (test_functions or {}).items():
        u = u(m) if callable(u) else np.asarray(u, dtype=float)
        averages[name] = [mean_value_average(u, d, ops) for d in sets]
    limit = {name: vals[0] for name, vals in averages.items()}
    return SweepReport(radii, sets, averages, not witnesses, monotone, limit, witnesses,
                       ops, g, sols, g.pole)


# ---------------------------------------------------------------------------


@dataclass
class MVTVerdict:
    boundary_distances: list
    recede_pass: bool
    averages: list
    average_pass: bool
    limit_error: float
    limit_tol: float
    limit_pass: bool
    spread: float

    @property
    def passed(self):
        return self.recede_pass and self.average_pass and self.limit_pass


def _harmonicity_residual(ops, u):
    Au = ops.stiffness @ u
    scale = abs(ops.stiffness) @ np.abs(u) + 1e-300
    return (Au / scale)[ops.interior_mask]


def mvt_verify(u, sweep, x0=None, subharmonic=False, harmonic_tol=1e-3, res_tol=1e-9,
               limit_tol=None):
    """Check the mean value behaviour of ``u`` along a sweep.

    The edge layer of D(r) must recede from x0 as r grows, averages must be
    constant (harmonic) or nondecreasing (subharmonic), and they must tend to
    u(x0) as r shrinks.

    ``u`` is first checked to be discretely harmonic (or subharmonic) on the
    ambient; failure there is a usage error, not a failed verdict.
    """
    ops = sweep.ops
    u = np.asarray(u(ops.mesh) if callable(u) else u, dtype=float)
    x0 = sweep.x0 if x0 is None else int(x0)
    res = _harmonicity_residual(ops, u)
    # A represents -Delta, so Delta u >= 0 means A u <= 0
    if subharmonic:
        if np.any(res > res_tol):
            raise ParameterError("u is not discretely subharmonic")
    elif np.any(np.abs(res) > res_tol):
        raise ParameterError("u is not discretely harmonic")

    dist = ops.mesh.distances_from(x0)
    bdist = [float(np.max(dist[d.edge_layer()], initial=0.0)) for d in sweep.sets]
    recede_pass = all(b2 >= b1 for b1, b2 in zip(bdist, bdist[1:]))

    avgs = [mean_value_average(u, d, ops) for d in sweep.sets]
    scale = max(1.0, float(np.max(np.abs(u))))
    spread = max(avgs) - min(avgs)
    if subharmonic:
        average_pass = all(b >= a - 1e-12 * scale for a, b in zip(avgs, avgs[1:]))
    else:
        average_pass = spread <= harmonic_tol
    h = ops.mesh.mesh_size()
    r_min = sweep.radii[0]
    tol = (h + r_min ** 2) * scale if limit_tol is None else limit_tol
    err = abs(avgs[0] - u[x0])
    return MVTVerdict(bdist, recede_pass, avgs, average_pass, float(err), float(tol),
                      err <= tol, float(spread))


# ---------------------------------------------------------------------------


def _set_on(mesh, xy, r, **solve_kw):
    m, ops, g = prepare_ambient(mesh, xy)
    return extract_mvs(solve_membrane(ops, g, r, **solve_kw))


@dataclass
class InvarianceReport:
    symdiff_volume: float
    tolerance: float
    passed: bool
    sets: tuple = field(repr=False, default=())


def symmetric_difference_volume(d1, d2):
    """Volume of ``D1 xor D2`` across meshes via nearest-vertex transfer (averaged both ways)."""
    if d1.mesh is d2.mesh:
        return float(np.sum(d1.ops.lumped_mass[d1.members ^ d2.members]))
    t1, t2 = cKDTree(d1.mesh.vertices), cKDTree(d2.mesh.vertices)
    in2 = d2.members[t2.query(d1.mesh.vertices)[1]]
    in1 = d1.members[t1.query(d2.mesh.vertices)[1]]
    v1 = np.sum(d1.ops.lumped_mass[d1.members ^ in2])
    v2 = np.sum(d2.ops.lumped_mass[d2.members ^ in1])
    return float(0.5 * (v1 + v2))


def layer_tolerance(d, h=None):
    """``2 h * perimeter`` with the perimeter of the disk of equal area."""
    h = d.mesh.mesh_size() if h is None else h
    return 2.0 * h * 2.0 * math.sqrt(math.pi * d.volume)


def domain_invariance(x0, r, n1, n2, **solve_kw):
    """Mean value sets built on two ambients agree up to one boundary layer."""
    if n1 is n2:
        d = _set_on(n1, x0, r, **solve_kw)
        if d.touches_boundary:
            raise PreconditionError("mean value set touches the ambient boundary")
        return InvarianceReport(0.0, layer_tolerance(d), True, (d, d))
    d1 = _set_on(n1, x0, r, **solve_kw)
    d2 = _set_on(n2, x0, r, **solve_kw)
    if d1.touches_boundary or d2.touches_boundary:
        raise PreconditionError("a mean value set touches its ambient boundary; "
                                "uniqueness needs compact containment")
    h = max(n1.mesh_size(), n2.mesh_size())
    tol = layer_tolerance(d1 if d1.volume >= d2.volume else d2, h)
    sd = symmetric_difference_volume(d1, d2)
    return InvarianceReport(sd, tol, sd <= tol, (d1, d2))


@dataclass
class MonotonicityReport:
    passed: bool
    equal: bool
    strict: bool
    violators: list
    sets: tuple = field(repr=False, default=())


def _embedding(small, big):
    tree = cKDTree(big.vertices)
    dist, idx = tree.query(small.vertices)
    scale = max(1.0, float(np.max(np.abs(big.vertices))))
    if np.any(dist > 1e-9 * scale):
        raise ParameterError("first ambient's vertices do not embed in the second")
    return idx


def domain_monotonicity(x0, r, n1, n2, **solve_kw):
    """``D(r; N1)`` lies in ``D(r; N2)`` (up to one layer) when ``N1`` sits inside ``N2``."""
    emb = _embedding(n1, n2)
    d1 = _set_on(n1, x0, r, **solve_kw)
    d2 = d1 if n1 is n2 else _set_on(n2, x0, r, **solve_kw)
    ring2 = one_ring(n2, d2.members)
    violators = [int(i) for i in np.flatnonzero(d1.members & ~ring2[emb])]
    image = np.zeros(n2.n_vertices, dtype=bool)
    image[emb[d1.members]] = True
    equal = bool(np.array_equal(image, d2.members))
    strict = bool(np.any(d2.members & ~image))
    return MonotonicityReport(not violators, equal, strict, violators, (d1, d2))


# ---------------------------------------------------------------------------


@dataclass
class R0Report:
    r_in: float
    r_out: float | None
    boundary_gap: float
    capped: bool
    evaluations: list


def distance_to_boundary(mesh):
    """Graph-geodesic distance of every vertex to the boundary (metric edge lengths)."""
    d = dijkstra(mesh.metric_edge_graph(), indices=np.flatnonzero(mesh.boundary), min_only=True)
    return np.asarray(d)


def r0_search(m, x0, tolerance, r_in=None, r_out=None, r_cap=100.0, **solve_kw):
    """Bisection for the largest r whose mean value set avoids the boundary.

    Returns the bracket ``(r_in, r_out)`` together with the distance from
    ``D(r_in)``'s edge layer to the boundary.  If no touching radius shows up
    below ``r_cap`` the report is flagged ``capped``.
    """
    if not np.any(m.boundary):
        raise ParameterError("r0 search needs an ambient with boundary")
    m, ops, g = prepare_ambient(m, x0)
    evals = []
    cache = {}

    def probe(r):
        if r not in cache:
            warm = None
            below = [k for k in cache if k < r]
            if below:
                warm = cache[max(below)][1].values
            sol = solve_membrane(ops, g, r, warm_start=warm, **solve_kw)
            d = extract_mvs(sol)
            cache[r] = (d, sol)
            evals.append((r, d.touches_boundary))
        return cache[r][0]

    h = m.mesh_size()
    lo = 10 * h if r_in is None else float(r_in)
    while probe(lo).touches_boundary:
        lo /= 2
        if lo < h:
            raise ParameterError("even tiny radii touch the boundary")
    hi = 2 * lo if r_out is None else float(r_out)
    while not probe(hi).touches_boundary:
        lo, hi = hi, 2 * hi
        if hi > r_cap:
            d = probe(lo)
            return R0Report(lo, None, _gap(d), True, evals)
    while hi - lo > tolerance:
        mid = 0.5 * (lo + hi)
        if probe(mid).touches_boundary:
            hi = mid
        else:
            lo = mid
    return R0Report(lo, hi, _gap(probe(lo)), False, evals)


@dataclass
class ExtrapolatedR0:
    r_in: float
    r_out: float
    estimate: float
    hs: tuple
    brackets: list          # raw (r_in, r_out) per resolution

    @property
    def width(self):
        return self.r_out - self.r_in


def r0_extrapolated(mesh_for_h, x0, hs, tolerance, **search_kw):
    """Richardson extrapolation in h of the discrete touching radius.

    The discrete set touches the boundary once its edge layer is one cell
    from it, so the discrete r0 undershoots by ``c h`` to leading order.
    With brackets at ``h`` and ``h/2`` the extrapolated value
    ``2 t(h/2) - t(h)`` lies in ``[2 a2 - b1, 2 b2 - a1]``.
    """
    hs = tuple(float(h) for h in hs)
    if len(hs) != 2 or not math.isclose(hs[1], hs[0] / 2):
        raise ParameterError("extrapolation needs resolutions (h, h/2)")
    brackets = []
    for h in hs:
        rep = r0_search(mesh_for_h(h), x0, tolerance, **search_kw)
        if rep.capped:
            raise ParameterError(f"r0 search capped at h={h:g}")
        brackets.append((rep.r_in, rep.r_out))
    (a1, b1), (a2, b2) = brackets
    mid = 2 * 0.5 * (a2 + b2) - 0.5 * (a1 + b1)
    return ExtrapolatedR0(2 * a2 - b1, 2 * b2 - a1, mid, hs, brackets)


def _gap(d):
    db = distance_to_boundary(d.mesh)
    return float(np.min(db[d.edge_layer()], initial=np.inf))


# ---------------------------------------------------------------------------


@dataclass
class NonparabolicRow:
    r: float
    circumradius: float
    flat_prediction: float
    hyperbolic_prediction: float
    volume: float
    ambient_radius: float
    stabilized: bool


@dataclass
class NonparabolicTable:
    rows: list

    def sublinear(self):
        pairs = list(zip(self.rows, self.rows[1:]))
        return all(b.circumradius / a.circumradius < b.r / a.r for a, b in pairs)

    def volume_errors(self):
        return [abs(row.volume / row.r ** 2 - 1.0) for row in self.rows]


def nonparabolic_boundedness_probe(r_list, h=None, start_margin=0.5, growth=0.5,
                                   max_ambient=4.0, h_rule=None, **solve_kw):
    """Stabilized circumradius of ``D(r)`` on the hyperbolic plane for growing ``r``.

    For each ``r`` the ambient geodesic disk grows by ``growth`` until two
    consecutive ambients give sets agreeing within the layer tolerance.
    ``h`` (chart units) may be a constant or chosen per ``r`` by ``h_rule``.
    """
    rows = []
    for r in r_list:
        rho_pred = math.acosh(1.0 + r * r / (2 * math.pi))
        hr = h_rule(r) if h_rule is not None else h
        ambient = rho_pred + start_margin
        prev, stable, d = None, False, None
        while ambient <= max_ambient + 1e-12:
            mesh = build_builtin(HYPERBOLIC, {"geodesic_radius": ambient}, hr)
            d = _set_on(mesh, (0.0, 0.0), r, **solve_kw)
            if not d.touches_boundary and prev is not None:
                sd = symmetric_difference_volume(prev, d)
                if sd <= layer_tolerance(d, hr * 2.0 / (1 - math.tanh(ambient / 2) ** 2)):
                    stable = True
                    break
            prev = d if not d.touches_boundary else None
            ambient += growth
        if not stable:
            log.warning("D(%g) did not stabilize below ambient radius %g", r, max_ambient)
        rows.append(NonparabolicRow(float(r), d.circumradius(), r / math.sqrt(math.pi),
                                    rho_pred, d.volume, ambient, stable))
    return NonparabolicTable(rows)
