"""Discrete Dirichlet Green's functions and their audit.

Normalization: ``Delta_g G = -delta_{x0}`` with ``G = 0`` on the boundary, so
``G > 0`` inside.  Discretely this is ``A G = e_pole``: a unit point load with
no mass weighting, which makes ``sum_i (A v)_i`` count the pole exactly once.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError
from .solvers import SparseSystem, cg_solve

GREEN_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class GreenField:
    values: np.ndarray
    pole: int
    ops: object = field(repr=False)

    @property
    def mesh(self):
        return self.ops.mesh

    def scale_away_from_pole(self):
        """Max of G outside the pole's closed 1-ring (the pole value diverges with h)."""
        near = self.ops.mesh.adjacency[self.pole].indices
        mask = np.ones(len(self.values), dtype=bool)
        mask[near] = False
        mask[self.pole] = False
        return float(np.max(self.values[mask], initial=0.0))


def green_function(ops, pole, tol=GREEN_TOL):
    """Solve ``A G = e_pole`` with zero Dirichlet data."""
    pole = int(pole)
    if not ops.interior_mask[pole]:
        raise ParameterError(f"pole {pole} is not an interior vertex")
    rhs = np.zeros(len(ops.interior_index))
    rhs[np.searchsorted(ops.interior_index, pole)] = 1.0
    g_int = cg_solve(SparseSystem(ops.interior_block, rhs), tol=tol)
    return GreenField(ops.expand(g_int), pole, ops)


@dataclass
class Check:
    name: str
    passed: bool
    violation: float
    where: list = field(default_factory=list)


@dataclass
class GreenAudit:
    checks: list
    flux: float

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def by_name(self, name):
        return next(c for c in self.checks if c.name == name)

    def as_dict(self):
        return {"passed": self.passed, "flux": self.flux,
                "checks": [{"name": c.name, "passed": c.passed, "violation": c.violation,
                            "where": [int(i) for i in c.where[:20]]} for c in self.checks]}


def verify_green(g, ops=None, tol=1e-9):
    """Audit positivity, harmonicity off the pole, boundary values and pole maximum."""
    ops = g.ops if ops is None else ops
    v = np.asarray(g.values, dtype=float)
    vmax = float(np.max(v))
    checks = []

    neg = v < -1e-8 * vmax
    checks.append(Check("I_positive", not neg.any(),
                        float(max(0.0, -v.min())), list(np.flatnonzero(neg))))

    res = ops.stiffness @ v
    res[g.pole] -= 1.0
    interior = ops.interior_mask.copy()
    bad_res = np.abs(res) * interior > tol
    checks.append(Check("II_harmonic_off_pole", not bad_res.any(),
                        float(np.max(np.abs(res[interior]), initial=0.0)),
                        list(np.flatnonzero(bad_res))))

    bvals = v[~ops.interior_mask]
    bad_b = np.flatnonzero(~ops.interior_mask)[bvals != 0.0]
    checks.append(Check("III_zero_boundary", len(bad_b) == 0,
                        float(np.max(np.abs(bvals), initial=0.0)), list(bad_b)))

    top = int(np.argmax(v))
    checks.append(Check("IV_pole_maximum", v[g.pole] >= vmax,
                        float(vmax - v[g.pole]), [] if top == g.pole else [top]))

    # outward flux through the boundary; equals the unit load by conservation
    flux = -float(np.sum((ops.stiffness @ v)[~ops.interior_mask]))
    checks.append(Check("unit_flux", abs(flux - 1.0) <= tol, abs(flux - 1.0)))
    return GreenAudit(checks, flux)
