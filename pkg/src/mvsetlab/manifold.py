"""Discrete chart manifolds, closed-form geodesics and the Laplace-Beltrami operator.

Every surface lives on a 2-D chart carrying a conformal metric
``g = lam(z)**2 |dz|**2``.  In two dimensions the Dirichlet energy is
conformally invariant, so the cotangent stiffness matrix is built from the
flat chart triangles alone and only the mass matrix sees ``lam``.

Stereographic charts project from the north pole, so the chart origin is the
south pole of the unit sphere and a chart point ``z`` sits at polar angle
``2 * arctan|z|`` measured from it.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components, dijkstra
from scipy.spatial import Delaunay, cKDTree

from .errors import AssemblyError, ParameterError, RestrictionError

log = logging.getLogger(__name__)

FLAT = "flat"
SPHERE = "sphere-stereographic"
HYPERBOLIC = "hyperbolic-poincare"
CUSTOM = "custom"
GEOMETRY_TAGS = (FLAT, SPHERE, HYPERBOLIC, CUSTOM)

# sectional curvature of each built-in geometry
_CURVATURE = {FLAT: 0.0, SPHERE: 1.0, HYPERBOLIC: -1.0}


def conformal_factor(tag, xy):
    """Per-point ``lam`` for a built-in geometry tag."""
    xy = np.atleast_2d(np.asarray(xy, dtype=float))
    r2 = np.einsum("ij,ij->i", xy, xy)
    if tag == FLAT:
        return np.ones(len(xy))
    if tag == SPHERE:
        return 2.0 / (1.0 + r2)
    if tag == HYPERBOLIC:
        if np.any(r2 >= 1.0):
            raise ParameterError("Poincare chart points must satisfy |z| < 1")
        return 2.0 / (1.0 - r2)
    raise ParameterError(f"no closed-form conformal factor for tag {tag!r}")


def chart_distance(tag, z, w):
    """Closed-form geodesic distance between chart points (broadcasts over rows)."""
    z = np.asarray(z, dtype=float)
    w = np.asarray(w, dtype=float)
    diff = np.linalg.norm(z - w, axis=-1)
    if tag == FLAT:
        return diff
    zz = np.sum(z * z, axis=-1)
    ww = np.sum(w * w, axis=-1)
    if tag == SPHERE:
        chord_half = diff / np.sqrt((1.0 + zz) * (1.0 + ww))
        return 2.0 * np.arcsin(np.clip(chord_half, 0.0, 1.0))
    if tag == HYPERBOLIC:
        # |1 - conj(z) w|^2 = 1 - 2 z.w + |z|^2 |w|^2
        dot = np.sum(z * w, axis=-1)
        denom = np.sqrt(np.maximum(1.0 - 2.0 * dot + zz * ww, 0.0))
        return 2.0 * np.arctanh(np.clip(diff / denom, 0.0, 1.0 - 1e-16))
    raise ParameterError(f"no closed-form distance for tag {tag!r}")


def _boundary_from_triangles(triangles, n_vertices):
    edges = np.sort(np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]],
                                    triangles[:, [2, 0]]]), axis=1)
    uniq, counts = np.unique(edges, axis=0, return_counts=True)
    flags = np.zeros(n_vertices, dtype=bool)
    flags[uniq[counts == 1].ravel()] = True
    return flags


def _signed_areas(vertices, triangles):
    a, b, c = (vertices[triangles[:, k]] for k in range(3))
    return 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1])
                  - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))


@dataclass(frozen=True, eq=False)
class ChartManifold:
    """Triangulated chart with a conformal metric factor per vertex."""

    vertices: np.ndarray
    triangles: np.ndarray
    conformal_factor: np.ndarray
    boundary: np.ndarray
    geometry_tag: str = FLAT
    curvature: float | None = None
    parent_index: np.ndarray | None = None
    dim: int = field(default=2, init=False)

    def __post_init__(self):
        if self.geometry_tag not in GEOMETRY_TAGS:
            raise ParameterError(f"unknown geometry tag {self.geometry_tag!r}")
        for name in ("vertices", "triangles", "conformal_factor", "boundary", "parent_index"):
            arr = getattr(self, name)
            if arr is not None:
                arr.setflags(write=False)
        if np.any(self.conformal_factor <= 0):
            raise ParameterError("conformal factor must be positive at every vertex")
        if np.any(_signed_areas(self.vertices, self.triangles) <= 0):
            raise AssemblyError("triangles must have positive (counter-clockwise) chart area")

    @property
    def n_vertices(self):
        return len(self.vertices)

    @cached_property
    def adjacency(self):
        """Symmetric 0/1 vertex adjacency in CSR form."""
        t = self.triangles
        rows = np.concatenate([t[:, 0], t[:, 1], t[:, 2], t[:, 1], t[:, 2], t[:, 0]])
        cols = np.concatenate([t[:, 1], t[:, 2], t[:, 0], t[:, 0], t[:, 1], t[:, 2]])
        adj = sp.csr_matrix((np.ones(len(rows)), (rows, cols)),
                            shape=(self.n_vertices, self.n_vertices))
        adj.data[:] = 1.0
        return adj

    @cached_property
    def _tree(self):
        return cKDTree(self.vertices)

    def nearest_vertex(self, xy):
        """Index of the closest vertex (an index array for a batch of points)."""
        xy = np.asarray(xy, dtype=float)
        idx = self._tree.query(xy)[1]
        return int(idx) if xy.ndim == 1 else np.asarray(idx)

    def metric_edge_graph(self):
        """Adjacency weighted by metric edge lengths (chart length times mean lam)."""
        coo = self.adjacency.tocoo()
        lengths = np.linalg.norm(self.vertices[coo.row] - self.vertices[coo.col], axis=1)
        lengths *= 0.5 * (self.conformal_factor[coo.row] + self.conformal_factor[coo.col])
        return sp.csr_matrix((lengths, (coo.row, coo.col)), shape=coo.shape)

    def distances_from(self, p):
        """Geodesic distance from vertex ``p`` to every vertex.

        Closed form for built-in tags; Dijkstra over metric edge lengths for
        custom meshes, which is an upper bound on the true distance.
        """
        if self.geometry_tag == CUSTOM:
            return dijkstra(self.metric_edge_graph(), indices=int(p))
        return chart_distance(self.geometry_tag, self.vertices[int(p)], self.vertices)

    def mesh_size(self):
        """Mean chart edge length."""
        coo = sp.triu(self.adjacency).tocoo()
        return float(np.mean(np.linalg.norm(self.vertices[coo.row] - self.vertices[coo.col], axis=1)))

    def metric_area(self):
        areas = _signed_areas(self.vertices, self.triangles)
        lam2 = self.conformal_factor[self.triangles] ** 2
        return float(np.sum(areas * lam2.mean(axis=1)))


@dataclass(frozen=True, eq=False)
class IntervalMesh:
    """1-D path mesh, used only for closed-form oracle fixtures (n = 1)."""

    x: np.ndarray
    dim: int = field(default=1, init=False)

    def __post_init__(self):
        if np.any(np.diff(self.x) <= 0):
            raise ParameterError("interval nodes must be strictly increasing")
        self.x.setflags(write=False)

    @property
    def n_vertices(self):
        return len(self.x)

    @property
    def vertices(self):
        return self.x[:, None]

    @cached_property
    def boundary(self):
        flags = np.zeros(len(self.x), dtype=bool)
        flags[[0, -1]] = True
        return flags

    @cached_property
    def adjacency(self):
        n = len(self.x)
        i = np.arange(n - 1)
        return sp.csr_matrix((np.ones(2 * (n - 1)), (np.r_[i, i + 1], np.r_[i + 1, i])),
                             shape=(n, n))

    def distances_from(self, p):
        return np.abs(self.x - self.x[int(p)])

    def nearest_vertex(self, x):
        return int(np.argmin(np.abs(self.x - float(np.ravel(x)[0]))))

    def mesh_size(self):
        return float(np.mean(np.diff(self.x)))


def interval_mesh(a, b, n_cells):
    return IntervalMesh(np.linspace(a, b, n_cells + 1))


# ---------------------------------------------------------------------------
# builders


def _graded_points(radius, h, kappa):
    """Lattice core plus concentric rings spaced ``kappa (1 - rho)`` towards the unit circle."""
    r_core = 1.0 - h / kappa
    if r_core >= radius - 2 * h:
        return _disk_points(radius, h)
    core = _disk_points(max(r_core, 2 * h), h)
    rings, rho = [core], max(r_core, 2 * h)
    while True:
        step = min(h, kappa * (1.0 - rho))
        rho = rho + step
        if rho >= radius - 0.5 * min(h, kappa * (1.0 - radius)):
            break
        n = max(6, math.ceil(2 * math.pi * rho / step))
        theta = 2 * np.pi * (np.arange(n) + 0.5 * (len(rings) % 2)) / n
        rings.append(rho * np.column_stack([np.cos(theta), np.sin(theta)]))
    n = max(6, math.ceil(2 * math.pi * radius / min(h, kappa * (1.0 - radius))))
    theta = 2 * np.pi * np.arange(n) / n
    rings.append(radius * np.column_stack([np.cos(theta), np.sin(theta)]))
    return np.vstack(rings)


def _disk_points(radius, h):
    """Hexagonal lattice clipped to the disk plus an equispaced boundary ring."""
    n_ring = 6 * max(1, math.ceil(2 * math.pi * radius / (6 * h)))
    k = math.ceil(radius / h) + 2
    kj = math.ceil(radius / (h * math.sqrt(3) / 2)) + 2
    i, j = np.meshgrid(np.arange(-2 * k, 2 * k + 1), np.arange(-kj, kj + 1), indexing="ij")
    pts = np.column_stack([(i + 0.5 * j).ravel() * h, (j * math.sqrt(3) / 2).ravel() * h])
    # spacing to the ring keeps boundary triangles from going obtuse
    pts = pts[np.linalg.norm(pts, axis=1) < radius - 0.55 * h]
    theta = 2 * np.pi * np.arange(n_ring) / n_ring
    ring = radius * np.column_stack([np.cos(theta), np.sin(theta)])
    return np.vstack([pts, ring])


def _triangulate(points):
    tri = Delaunay(points)
    t = tri.simplices.astype(np.int64)
    areas = _signed_areas(points, t)
    flip = areas < 0
    t[flip] = t[flip][:, [0, 2, 1]]
    keep = np.abs(areas) > 1e-14 * np.max(np.abs(areas))
    return t[keep]


def _square_mesh(side, h, center):
    n = max(1, math.ceil(side / h))
    g = np.linspace(-side / 2, side / 2, n + 1)
    X, Y = np.meshgrid(g + center[0], g + center[1], indexing="xy")
    pts = np.column_stack([X.ravel(), Y.ravel()])
    idx = np.arange((n + 1) ** 2).reshape(n + 1, n + 1)
    a, b = idx[:-1, :-1].ravel(), idx[:-1, 1:].ravel()
    c, d = idx[1:, :-1].ravel(), idx[1:, 1:].ravel()
    # every cell split along the same diagonal: right isoceles triangles
    tris = np.vstack([np.column_stack([a, b, d]), np.column_stack([a, d, c])])
    return pts, tris


def _from_points_triangles(pts, tris, tag, lam=None):
    if lam is None:
        lam = conformal_factor(tag, pts)
    return ChartManifold(
        vertices=np.ascontiguousarray(pts, dtype=float),
        triangles=np.ascontiguousarray(tris, dtype=np.int64),
        conformal_factor=np.asarray(lam, dtype=float),
        boundary=_boundary_from_triangles(tris, len(pts)),
        geometry_tag=tag,
        curvature=_CURVATURE.get(tag),
    )


def _chart_radius(tag, params):
    if tag == FLAT:
        r = params.get("radius", 1.0)
    elif tag == SPHERE:
        if "chart_radius" in params:
            r = params["chart_radius"]
        else:
            theta = params.get("cap_angle", math.pi / 2)
            if not 0 < theta < math.pi:
                raise ParameterError("cap_angle must lie in (0, pi)")
            r = math.tan(theta / 2)
    else:
        if "chart_radius" in params:
            r = params["chart_radius"]
        else:
            r = math.tanh(params.get("geodesic_radius", 1.0) / 2)
        if not r < 1.0:
            raise ParameterError("Poincare chart radius must be < 1")
    if not r > 0:
        raise ParameterError("radius must be positive")
    return float(r)


def build_builtin(geometry_tag, shape_params=None, target_edge_length=0.05):
    """Build one of the built-in chart manifolds.

    * ``flat``: ``{"shape": "square", "side": s, "center": (x, y)}`` (default
      the unit square ``[0, 1]^2``) or ``{"shape": "disk", "radius": R}``.
    * ``sphere-stereographic``: geodesic cap about the south pole,
      ``{"cap_angle": theta}`` or ``{"chart_radius": c}``.
    * ``hyperbolic-poincare``: geodesic disk about the origin,
      ``{"geodesic_radius": rho}`` or ``{"chart_radius": c}`` with ``c < 1``;
      ``"grading": kappa`` shrinks the spacing to ``kappa (1 - |z|)`` near
      the rim, where the conformal factor blows up.
    """
    params = dict(shape_params or {})
    h = float(target_edge_length)
    if not h > 0:
        raise ParameterError("target_edge_length must be positive")
    if geometry_tag == FLAT and params.get("shape", "square") == "square":
        side = float(params.get("side", 1.0))
        if not side > 0:
            raise ParameterError("square side must be positive")
        center = params.get("center", (side / 2, side / 2))
        pts, tris = _square_mesh(side, h, center)
        return _from_points_triangles(pts, tris, FLAT)
    if geometry_tag not in (FLAT, SPHERE, HYPERBOLIC):
        raise ParameterError(f"no built-in generator for tag {geometry_tag!r}")
    if geometry_tag == FLAT and params.get("shape") != "disk":
        raise ParameterError(f"unknown flat shape {params.get('shape')!r}")
    radius = _chart_radius(geometry_tag, params)
    if radius < 2 * h:
        raise ParameterError("chart radius must exceed two edge lengths")
    grading = params.get("grading")
    if grading is not None:
        if geometry_tag != HYPERBOLIC or not 0 < grading < 1:
            raise ParameterError("grading in (0, 1) applies to the Poincare chart only")
        pts = _graded_points(radius, h, float(grading))
    else:
        pts = _disk_points(radius, h)
    if geometry_tag == FLAT:
        pts = pts + np.asarray(params.get("center", (0.0, 0.0)), dtype=float)
    return _from_points_triangles(pts, _triangulate(pts), geometry_tag)


def custom_manifold(vertices, triangles, lam=None):
    """Wrap an arbitrary chart triangulation; distances fall back to Dijkstra."""
    vertices = np.asarray(vertices, dtype=float)
    lam = np.ones(len(vertices)) if lam is None else np.asarray(lam, dtype=float)
    tris = np.asarray(triangles, dtype=np.int64)
    return _from_points_triangles(vertices, tris, CUSTOM, lam)


def closed_form_area(geometry_tag, shape_params):
    """Exact metric area of a built-in domain (ignores the polygonal boundary)."""
    params = dict(shape_params or {})
    if geometry_tag == FLAT:
        if params.get("shape", "square") == "square":
            return float(params.get("side", 1.0)) ** 2
        return math.pi * float(params.get("radius", 1.0)) ** 2
    c = _chart_radius(geometry_tag, params)
    if geometry_tag == SPHERE:
        theta = 2 * math.atan(c)
        return 2 * math.pi * (1 - math.cos(theta))
    rho = 2 * math.atanh(c)
    return 2 * math.pi * (math.cosh(rho) - 1)


def geodesic_distance(m, p, x):
    """Geodesic distance between two vertices of ``m``."""
    n = m.n_vertices
    if not (0 <= p < n and 0 <= x < n):
        raise ParameterError("vertex index out of range")
    if m.geometry_tag == CUSTOM:
        return float(m.distances_from(p)[x])
    return float(chart_distance(m.geometry_tag, m.vertices[p], m.vertices[x]))


# ---------------------------------------------------------------------------
# operators


@dataclass(frozen=True, eq=False)
class OperatorBundle:
    """Stiffness matrix of ``-Delta_g`` plus lumped (diagonal) metric mass."""

    stiffness: sp.csr_matrix
    lumped_mass: np.ndarray
    interior_index: np.ndarray
    mesh: object

    @property
    def n(self):
        return len(self.lumped_mass)

    @cached_property
    def interior_mask(self):
        mask = np.zeros(self.n, dtype=bool)
        mask[self.interior_index] = True
        return mask

    @cached_property
    def interior_block(self):
        idx = self.interior_index
        return self.stiffness[idx][:, idx].tocsr()

    @cached_property
    def boundary_coupling(self):
        """Columns of the interior rows that hit boundary vertices."""
        bidx = np.flatnonzero(~self.interior_mask)
        return self.stiffness[self.interior_index][:, bidx].tocsr(), bidx

    def expand(self, interior_values, boundary_values=0.0):
        """Scatter interior unknowns into a full per-vertex vector."""
        full = np.empty(self.n)
        full[~self.interior_mask] = boundary_values
        full[self.interior_index] = interior_values
        return full


def assemble_operators(m):
    """Cotangent stiffness and lumped mass for a chart manifold (or interval)."""
    if getattr(m, "dim", 2) == 1:
        return _interval_operators(m)
    v, t = m.vertices, m.triangles
    areas = _signed_areas(v, t)
    if np.any(areas <= 1e-300):
        raise AssemblyError("degenerate triangle with zero chart area")
    rows, cols, vals = [], [], []
    for k in range(3):
        i, j, o = t[:, (k + 1) % 3], t[:, (k + 2) % 3], t[:, k]
        e1, e2 = v[i] - v[o], v[j] - v[o]
        cot = np.einsum("ij,ij->i", e1, e2) / (2.0 * areas)
        w = 0.5 * cot
        rows += [i, j, i, j]
        cols += [j, i, i, j]
        vals += [-w, -w, w, w]
    n = m.n_vertices
    A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n))
    A = ((A + A.T) * 0.5).tocsr()
    A.sum_duplicates()
    lam2 = m.conformal_factor[t] ** 2
    tri_mass = areas * lam2.mean(axis=1) / 3.0
    mass = np.bincount(t.ravel(), weights=np.repeat(tri_mass, 3), minlength=n)
    offdiag = A - sp.diags(A.diagonal())
    n_pos = int(np.count_nonzero(offdiag.data > 1e-12))
    if n_pos:
        log.info("stiffness has %d positive off-diagonal entries (non-Delaunay edges)", n_pos)
    interior = np.flatnonzero(~m.boundary)
    return OperatorBundle(A, mass, interior, m)


def _interval_operators(m):
    x = m.x
    dx = np.diff(x)
    n = len(x)
    i = np.arange(n - 1)
    w = 1.0 / dx
    A = sp.csr_matrix((np.r_[-w, -w, w, w], (np.r_[i, i + 1, i, i + 1], np.r_[i + 1, i, i, i + 1])),
                      shape=(n, n))
    mass = np.zeros(n)
    mass[:-1] += dx / 2
    mass[1:] += dx / 2
    return OperatorBundle(A.tocsr(), mass, np.flatnonzero(~m.boundary), m)


def discrete_laplacian(ops, field):
    """``Delta_g`` of a vertex field as ``-M^{-1} A f``; NaN marks boundary vertices."""
    out = -(ops.stiffness @ np.asarray(field, dtype=float)) / ops.lumped_mass
    out[~ops.interior_mask] = np.nan
    return out


def restrict_submanifold(m, center, radius):
    """Submesh of triangles whose vertices all lie in the closed geodesic ball.

    Vertices of the ambient boundary that fall inside the ball stay boundary
    vertices of the result.
    """
    if not radius > 0:
        raise ParameterError("radius must be positive")
    d = m.distances_from(center)
    inside = d <= radius
    keep = np.all(inside[m.triangles], axis=1)
    if not np.any(keep):
        raise RestrictionError("restriction is empty")
    tris = m.triangles[keep]
    used = np.unique(tris)
    remap = -np.ones(m.n_vertices, dtype=np.int64)
    remap[used] = np.arange(len(used))
    new_tris = remap[tris]
    n_comp, _ = connected_components(m.adjacency[used][:, used], directed=False)
    if n_comp != 1:
        raise RestrictionError(f"restriction has {n_comp} connected components")
    boundary = _boundary_from_triangles(new_tris, len(used)) | m.boundary[used]
    parent = used if m.parent_index is None else m.parent_index[used]
    return ChartManifold(
        vertices=m.vertices[used].copy(),
        triangles=new_tris,
        conformal_factor=m.conformal_factor[used].copy(),
        boundary=boundary,
        geometry_tag=m.geometry_tag,
        curvature=m.curvature,
        parent_index=np.asarray(parent, dtype=np.int64).copy(),
    )


def one_ring(mesh, mask):
    """Vertices in ``mask`` plus all their neighbours."""
    mask = np.asarray(mask, dtype=bool)
    return mask | (mesh.adjacency @ mask.astype(float) > 0)
