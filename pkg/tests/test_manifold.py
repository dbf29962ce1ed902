import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from mvsetlab.errors import AssemblyError, ParameterError, RestrictionError
from mvsetlab.manifold import (CUSTOM, FLAT, HYPERBOLIC, SPHERE, assemble_operators,
                               build_builtin, chart_distance, closed_form_area,
                               conformal_factor, custom_manifold, discrete_laplacian,
                               geodesic_distance, interval_mesh, one_ring, restrict_submanifold)

chart_points = st.tuples(st.floats(-0.9, 0.9), st.floats(-0.9, 0.9)).filter(
    lambda p: p[0] ** 2 + p[1] ** 2 < 0.8)


def test_conformal_factors():
    z = np.array([[0.0, 0.0], [0.5, 0.0]])
    assert np.allclose(conformal_factor(FLAT, z), 1.0)
    assert np.allclose(conformal_factor(SPHERE, z), [2.0, 2 / 1.25])
    assert np.allclose(conformal_factor(HYPERBOLIC, z), [2.0, 2 / 0.75])


def test_distance_examples():
    assert chart_distance(FLAT, (0, 0), (3, 4)) == pytest.approx(5.0)
    assert chart_distance(HYPERBOLIC, (0, 0), (0.5, 0)) == pytest.approx(math.log(3.0), rel=1e-14)
    # chart radius 1 is the equator when the origin is the south pole
    assert chart_distance(SPHERE, (0, 0), (1, 0)) == pytest.approx(math.pi / 2, rel=1e-14)


@settings(max_examples=60, deadline=None)
@given(chart_points, chart_points, chart_points)
def test_distances_are_metrics(p, q, r):
    for tag in (FLAT, SPHERE, HYPERBOLIC):
        d = lambda a, b: float(chart_distance(tag, a, b))
        assert d(p, q) == d(q, p)
        assert d(p, p) == pytest.approx(0.0, abs=1e-7)
        assert d(p, r) <= d(p, q) + d(q, r) + 1e-12


@settings(max_examples=40, deadline=None)
@given(st.floats(0.01, 0.95))
def test_radial_distance_matches_metric_integral(t):
    # integrate lambda along the ray from the origin
    s = np.linspace(0.0, t, 4001)
    for tag in (SPHERE, HYPERBOLIC):
        lam = conformal_factor(tag, np.column_stack([s, np.zeros_like(s)]))
        assert chart_distance(tag, (0, 0), (t, 0)) == pytest.approx(np.trapezoid(lam, s), rel=1e-6)


def test_unit_square_mass_and_stencil():
    m = build_builtin(FLAT, {"shape": "square", "side": 1.0}, 0.05)
    ops = assemble_operators(m)
    assert ops.lumped_mass.sum() == pytest.approx(1.0, abs=1e-12)
    A = ops.stiffness
    i = m.nearest_vertex((0.5, 0.5))
    row = A[i].toarray().ravel()
    assert row[i] == pytest.approx(4.0)
    nz = np.sort(row[np.abs(row) > 1e-14])
    assert np.allclose(nz, [-1, -1, -1, -1, 4])


@pytest.mark.parametrize("tag,params,h", [
    (FLAT, {"shape": "disk", "radius": 1.0}, 0.05),
    (SPHERE, {"cap_angle": 2.0}, 0.05),
    (HYPERBOLIC, {"geodesic_radius": 1.0}, 0.03),
])
def test_operator_invariants(tag, params, h):
    m = build_builtin(tag, params, h)
    ops = assemble_operators(m)
    A = ops.stiffness
    assert abs(A - A.T).max() == 0
    assert np.max(np.abs(A @ np.ones(m.n_vertices))) <= 1e-12 * abs(A).max()
    assert np.all(ops.lumped_mass > 0)
    assert ops.lumped_mass.sum() == pytest.approx(m.metric_area(), rel=1e-12)
    # interior block is SPD: Cholesky-free check via smallest eigenvalue
    lam_min = sp.linalg.eigsh(ops.interior_block, k=1, sigma=0, which="LM",
                              return_eigenvectors=False)[0]
    assert lam_min > 0
    offdiag = A - sp.diags(A.diagonal())
    assert offdiag.data.max() <= 1e-12


def test_boundary_flags_match_single_triangle_edges():
    m = build_builtin(FLAT, {"shape": "disk", "radius": 1.0}, 0.1)
    edges = np.sort(np.vstack([m.triangles[:, [0, 1]], m.triangles[:, [1, 2]],
                               m.triangles[:, [2, 0]]]), axis=1)
    uniq, counts = np.unique(edges, axis=0, return_counts=True)
    flagged = np.zeros(m.n_vertices, dtype=bool)
    flagged[uniq[counts == 1].ravel()] = True
    assert np.array_equal(flagged, m.boundary)
    assert np.allclose(np.linalg.norm(m.vertices[m.boundary], axis=1), 1.0)


@pytest.mark.parametrize("tag,params", [
    (FLAT, {"shape": "disk", "radius": 1.0}),
    (SPHERE, {"cap_angle": 2.5}),
    (HYPERBOLIC, {"geodesic_radius": 1.0}),
])
def test_area_converges_second_order(tag, params):
    exact = closed_form_area(tag, params)
    errs = []
    hs = [0.08, 0.04, 0.02]
    for h in hs:
        m = build_builtin(tag, params, h)
        errs.append(abs(assemble_operators(m).lumped_mass.sum() - exact))
    rate = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    assert rate > 1.7


def test_closed_form_areas():
    assert closed_form_area(HYPERBOLIC, {"geodesic_radius": 1.0}) == pytest.approx(
        2 * math.pi * (math.cosh(1.0) - 1), rel=1e-14)
    # a cap of angle pi - eps covers almost the full sphere
    assert closed_form_area(SPHERE, {"cap_angle": math.pi - 0.1}) == pytest.approx(
        4 * math.pi - 2 * math.pi * (1 - math.cos(0.1)), rel=1e-12)


def test_graded_hyperbolic_rim_area():
    params = {"chart_radius": 0.99, "grading": 0.25}
    m = build_builtin(HYPERBOLIC, params, 0.04)
    area = assemble_operators(m).lumped_mass.sum()
    assert area == pytest.approx(closed_form_area(HYPERBOLIC, params), rel=0.05)


@pytest.mark.parametrize("tag,params", [
    (HYPERBOLIC, {"chart_radius": 1.0}),
    (HYPERBOLIC, {"geodesic_radius": 1.0, "grading": 2.0}),
    (SPHERE, {"cap_angle": 4.0}),
    (FLAT, {"shape": "triangle"}),
    ("klein", {}),
])
def test_invalid_shapes(tag, params):
    with pytest.raises(ParameterError):
        build_builtin(tag, params, 0.05)


def test_degenerate_triangle_rejected():
    v = np.array([[0, 0], [1, 0], [2, 0], [0, 1]], dtype=float)
    with pytest.raises(AssemblyError):
        custom_manifold(v, [[0, 1, 2]])


def test_custom_mesh_uses_graph_distance():
    m0 = build_builtin(FLAT, {"shape": "square", "side": 1.0}, 0.1)
    m = custom_manifold(m0.vertices, m0.triangles)
    assert m.geometry_tag == CUSTOM
    p, x = m.nearest_vertex((0.0, 0.0)), m.nearest_vertex((1.0, 1.0))
    d = geodesic_distance(m, p, x)
    # graph path is an upper bound on the Euclidean distance
    assert d >= math.sqrt(2) - 1e-12
    assert d == pytest.approx(math.sqrt(2), rel=1e-12)


def test_discrete_laplacian_quadratic():
    m = build_builtin(FLAT, {"shape": "disk", "radius": 1.0}, 0.02)
    ops = assemble_operators(m)
    r = np.linalg.norm(m.vertices, axis=1)
    lap = discrete_laplacian(ops, r ** 2)
    inner = r < 1 - 5 * 0.02
    assert np.max(np.abs(lap[inner] - 4.0)) <= 0.02
    assert np.all(np.isnan(lap[m.boundary]))
    const = discrete_laplacian(ops, np.full(m.n_vertices, 3.0))
    assert np.nanmax(np.abs(const)) <= 1e-10


def test_discrete_laplacian_sphere_distance():
    m = build_builtin(SPHERE, {"chart_radius": 0.8}, 0.01)
    ops = assemble_operators(m)
    d = m.distances_from(m.nearest_vertex((0, 0)))
    lap = discrete_laplacian(ops, d ** 2)
    sel = (d > 0.3) & (d < 1.0)
    exact = 2 + 2 * d[sel] / np.tan(d[sel])
    assert np.mean(np.abs(lap[sel] - exact)) <= 0.02


def test_restrict_submanifold():
    m = build_builtin(FLAT, {"shape": "square", "side": 1.0}, 0.05)
    c = m.nearest_vertex((0.5, 0.5))
    sub = restrict_submanifold(m, c, 0.25)
    assert np.all(np.linalg.norm(sub.vertices - m.vertices[c], axis=1) <= 0.25 + 0.05)
    assert np.array_equal(m.vertices[sub.parent_index], sub.vertices)
    whole = restrict_submanifold(m, c, 10.0)
    assert whole.n_vertices == m.n_vertices
    # ball overlapping the outer boundary keeps those boundary vertices flagged
    corner = m.nearest_vertex((0.0, 0.5))
    edge = restrict_submanifold(m, corner, 0.3)
    inherited = m.boundary[edge.parent_index]
    assert np.all(edge.boundary[inherited])


def test_restrict_errors():
    m = build_builtin(FLAT, {"shape": "square", "side": 1.0}, 0.1)
    with pytest.raises(ParameterError):
        restrict_submanifold(m, 0, -1.0)
    with pytest.raises(RestrictionError):
        restrict_submanifold(m, 0, 1e-6)


def test_one_ring():
    m = build_builtin(FLAT, {"shape": "square", "side": 1.0}, 0.1)
    mask = np.zeros(m.n_vertices, dtype=bool)
    i = m.nearest_vertex((0.5, 0.5))
    mask[i] = True
    ring = one_ring(m, mask)
    assert ring[i] and ring.sum() == 1 + len(m.adjacency[i].indices)


def test_interval_operators():
    m = interval_mesh(0.0, 1.0, 8)
    ops = assemble_operators(m)
    assert ops.lumped_mass.sum() == pytest.approx(1.0)
    assert ops.stiffness[4, 4] == pytest.approx(16.0)
    assert list(ops.interior_index) == list(range(1, 8))


def test_meshes_are_read_only():
    m = build_builtin(FLAT, {"shape": "disk", "radius": 1.0}, 0.2)
    with pytest.raises(ValueError):
        m.vertices[0, 0] = 5.0


def test_assembly_error_on_flat_triangle():
    from mvsetlab.manifold import ChartManifold
    with pytest.raises(AssemblyError):
        ChartManifold(np.array([[0, 0], [1, 0], [2, 0.0]]), np.array([[0, 1, 2]]),
                      np.ones(3), np.ones(3, dtype=bool))
