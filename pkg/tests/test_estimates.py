import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvsetlab.errors import NumericError, ParameterError
from mvsetlab.estimates import (harnack_ensemble, harnack_ratio, key_estimate_fit,
                                random_boundary_sampler)
from mvsetlab.manifold import FLAT, HYPERBOLIC, SPHERE, assemble_operators, build_builtin


@pytest.fixture(scope="module")
def disk():
    return build_builtin(FLAT, {"shape": "disk", "radius": 1.2}, 0.02)


@pytest.mark.parametrize("tag,params,h,a2", [
    (FLAT, {"shape": "disk", "radius": 0.6}, 0.01, 0.0),
    (SPHERE, {"chart_radius": 0.3}, 0.005, -2 / 3),
    (HYPERBOLIC, {"chart_radius": 0.3}, 0.005, 2 / 3),
])
def test_key_estimate(tag, params, h, a2):
    m = build_builtin(tag, params, h)
    fit = key_estimate_fit(m, assemble_operators(m), m.nearest_vertex((0, 0)))
    assert fit.a0 == pytest.approx(4.0, abs=0.05)
    if a2 == 0:
        assert abs(fit.a2) <= 0.2
        assert fit.coefficient_report()["supported"] is None
    else:
        assert fit.a2 == pytest.approx(a2, rel=0.1)
        assert fit.coefficient_report()["supported"] == "2/3"
    assert np.isfinite(fit.residual)


def test_key_estimate_a0_converges():
    errs = []
    for h in (0.01, 0.005):
        m = build_builtin(SPHERE, {"chart_radius": 0.3}, h)
        fit = key_estimate_fit(m, None, m.nearest_vertex((0, 0)))
        errs.append(abs(fit.a0 - 4.0))
    # both resolutions sit at the fit's noise floor
    assert max(errs) < 1e-3


def test_key_estimate_sparse_bins():
    m = build_builtin(FLAT, {"shape": "disk", "radius": 0.6}, 0.05)
    with pytest.raises(ParameterError):
        key_estimate_fit(m, None, m.nearest_vertex((0, 0)), radii=[0.1, 0.2], h=0.001)


def test_harnack_constant_and_linear(disk):
    p = disk.nearest_vertex((0, 0))
    one = harnack_ratio(disk, p, 0.5, lambda xy: np.ones(len(xy)))
    assert one.ratio == pytest.approx(1.0, abs=1e-12)
    lin = harnack_ratio(disk, p, 0.5, lambda xy: 1 + xy[:, 0])
    assert lin.ratio == pytest.approx(3.0, rel=0.05)
    assert lin.sup_val >= lin.inf_val > 0


def test_harnack_rejects_bad_data(disk):
    p = disk.nearest_vertex((0, 0))
    with pytest.raises(ParameterError):
        harnack_ratio(disk, p, 0.25, lambda xy: xy[:, 0])
    with pytest.raises(ParameterError):
        harnack_ratio(disk, p, 0.0, lambda xy: np.ones(len(xy)))


def test_harnack_ensemble_uniform(disk):
    p = disk.nearest_vertex((0, 0))
    ens = harnack_ensemble(disk, p, 0.25, n_samples=20, seed=7)
    assert len(ens.reports) == 20
    assert ens.bounded_by(ens.uniform_constant)
    assert ens.uniform_constant <= math.log(2.0)
    again = harnack_ensemble(disk, p, 0.25, n_samples=20, seed=7, jobs=2)
    assert again.ratios == ens.ratios


@settings(max_examples=15, deadline=None)
@given(st.floats(0.1, 50.0), st.integers(0, 1000))
def test_harnack_ratio_scale_free(c, seed):
    m = build_builtin(FLAT, {"shape": "disk", "radius": 1.0}, 0.05)
    p = m.nearest_vertex((0, 0))
    smp = random_boundary_sampler(np.random.default_rng(seed))
    a = harnack_ratio(m, p, 0.3, smp)
    b = harnack_ratio(m, p, 0.3, lambda xy: c * smp(xy))
    assert b.ratio == pytest.approx(a.ratio, rel=1e-9)


def test_harnack_hyperbolic_uses_curvature():
    m = build_builtin(HYPERBOLIC, {"chart_radius": 0.6}, 0.03)
    rep = harnack_ratio(m, m.nearest_vertex((0, 0)), 0.4, lambda xy: 1.5 + 0.4 * xy[:, 1])
    assert rep.K == 1.0
    assert rep.bound == pytest.approx(rep.ratio)
