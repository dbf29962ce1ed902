import math

import numpy as np
import pytest

from mvsetlab.errors import ParameterError
from mvsetlab.green import GreenField, green_function, verify_green
from mvsetlab.manifold import FLAT, assemble_operators, build_builtin


def test_centered_disk_closed_form(disk_02):
    m, ops, g = disk_02
    r = np.linalg.norm(m.vertices, axis=1)
    sel = np.abs(r - 0.5) < 0.011
    exact = np.log(1.0 / r[sel]) / (2 * math.pi)
    assert np.max(np.abs(g.values[sel] - exact)) <= 1e-3
    v = m.nearest_vertex((0.5, 0.0))
    assert g.values[v] == pytest.approx(math.log(2) / (2 * math.pi), abs=2 * 0.02 ** 2 * math.log(50))


def test_boundary_exactly_zero_and_audit(coarse_disk):
    m, ops, g = coarse_disk
    assert np.all(g.values[m.boundary] == 0.0)
    audit = verify_green(g)
    assert audit.passed, audit.as_dict()
    assert audit.flux == pytest.approx(1.0, abs=1e-9)


def test_pole_must_be_interior(coarse_disk):
    m, ops, g = coarse_disk
    with pytest.raises(ParameterError):
        green_function(ops, int(np.flatnonzero(m.boundary)[0]))


def test_fault_injection(coarse_disk):
    m, ops, g = coarse_disk
    bad = g.values.copy()
    k = m.nearest_vertex((0.3, 0.2))
    bad[k] = -bad[k]
    audit = verify_green(GreenField(bad, g.pole, ops))
    check = audit.by_name("I_positive")
    assert not check.passed and k in check.where
    # a bump vanishing on the boundary is not discretely harmonic
    r2 = np.sum(m.vertices ** 2, axis=1)
    bumped = g.values + 1e-3 * np.where(m.boundary, 0.0, 1.0 - r2)
    assert not verify_green(GreenField(bumped, g.pole, ops)).by_name("II_harmonic_off_pole").passed


def test_symmetry(coarse_disk):
    m, ops, _ = coarse_disk
    p, q = m.nearest_vertex((0.1, 0.2)), m.nearest_vertex((-0.4, 0.3))
    gp, gq = green_function(ops, p), green_function(ops, q)
    assert gp.values[q] == pytest.approx(gq.values[p], rel=1e-8)


def test_domain_monotonicity():
    h = 0.04
    small = build_builtin(FLAT, {"shape": "disk", "radius": 1.0}, h)
    big = build_builtin(FLAT, {"shape": "disk", "radius": 2.0}, h)
    g1 = green_function(assemble_operators(small), small.nearest_vertex((0, 0)))
    g2 = green_function(assemble_operators(big), big.nearest_vertex((0, 0)))
    idx = big.nearest_vertex(small.vertices)
    common = np.linalg.norm(big.vertices[idx] - small.vertices, axis=1) < 1e-9
    assert np.all(g1.values[common] <= g2.values[idx[common]] + 1e-12)


def test_pole_growth_is_logarithmic():
    hs = [0.08, 0.04, 0.02]
    ring_max = []
    for h in hs:
        m = build_builtin(FLAT, {"shape": "disk", "radius": 1.0}, h)
        g = green_function(assemble_operators(m), m.nearest_vertex((0, 0)))
        ring_max.append(g.values[g.pole])
    slope = np.polyfit(np.log(1 / np.array(hs)), ring_max, 1)[0]
    assert slope == pytest.approx(1 / (2 * math.pi), rel=0.15)
