"""Probes for the expansion of the Laplacian of squared distance and for Harnack ratios."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ParameterError
from .manifold import assemble_operators, discrete_laplacian, restrict_submanifold
from .solvers import SparseSystem, cg_solve

log = logging.getLogger(__name__)

MIN_BIN_SAMPLES = 12


@dataclass
class ExpansionFit:
    a0: float
    a2: float
    residual: float
    sample_radii: np.ndarray
    bin_means: np.ndarray
    remainder_ratio: float      # max |mean - a0 - a2 rho^2| / rho^3 over the bins
    h: float
    curvature: float | None = None

    def rows(self):
        fitted = self.a0 + self.a2 * self.sample_radii ** 2
        return [(float(r), float(m), float(f))
                for r, m, f in zip(self.sample_radii, self.bin_means, fitted)]

    def coefficient_report(self):
        """Which Ricci coefficient of the rho^2 term the measured a2 supports.

        In 2-D ``Ric(v, v) = K``, so the candidates are ``-K/3`` and ``-2K/3``.
        """
        k = self.curvature
        if not k:
            return {"curvature": k, "a2": self.a2, "supported": None}
        cands = {"1/3": -k / 3.0, "2/3": -2.0 * k / 3.0}
        rel = {name: abs(self.a2 - v) / abs(v) for name, v in cands.items()}
        return {"curvature": k, "a2": self.a2,
                "relative_error": rel, "supported": min(rel, key=rel.get)}


def _local_edge_length(m, p):
    """Metric length of edges at ``p`` (mean over its 1-ring)."""
    nbrs = m.adjacency[p].indices
    chart = np.linalg.norm(m.vertices[nbrs] - m.vertices[p], axis=1)
    lam = 0.5 * (m.conformal_factor[nbrs] + m.conformal_factor[p])
    return float(np.mean(chart * lam))


def key_estimate_fit(m, ops, p, radii=None, rho_max=0.3, h=None):
    """Least-squares fit of ``Delta_g d_p^2 ~ a0 + a2 rho^2``.

    Samples are the discrete Laplacian at interior vertices, grouped in bins
    ``[rho - h, rho + h]``; each bin contributes its mean.  By default the
    bin centres step by ``2h`` across ``[10h, rho_max]``.
    """
    p = int(p)
    if ops is None:
        ops = assemble_operators(m)
    if not ops.interior_mask[p]:
        raise ParameterError("p must be an interior vertex")
    h = _local_edge_length(m, p) if h is None else float(h)
    if radii is None:
        radii = np.arange(10 * h, rho_max + 1e-12, 2 * h)
    radii = np.asarray(radii, dtype=float)
    if len(radii) < 2:
        raise ParameterError("need at least two sample radii")
    d = m.distances_from(p)
    lap = discrete_laplacian(ops, d ** 2)
    # stay a few layers off the boundary where the stencil is one-sided
    boundary_dist = np.min(d[m.boundary]) if np.any(m.boundary) else np.inf
    ok = ops.interior_mask & (d < boundary_dist - 3 * h)
    means = []
    for rho in radii:
        sel = ok & (np.abs(d - rho) <= h)
        if np.count_nonzero(sel) < MIN_BIN_SAMPLES:
            raise ParameterError(f"bin at rho={rho:g} has {np.count_nonzero(sel)} samples "
                                 f"(need {MIN_BIN_SAMPLES})")
        means.append(float(np.mean(lap[sel])))
    means = np.asarray(means)
    design = np.column_stack([np.ones_like(radii), radii ** 2])
    coef, *_ = np.linalg.lstsq(design, means, rcond=None)
    resid = means - design @ coef
    if not np.all(np.isfinite(resid)):
        raise NumericError("non-finite fit residual")
    return ExpansionFit(float(coef[0]), float(coef[1]), float(np.sqrt(np.mean(resid ** 2))),
                        radii, means, float(np.max(np.abs(resid) / radii ** 3)), h,
                        getattr(m, "curvature", None))


# ---------------------------------------------------------------------------


@dataclass
class HarnackReport:
    sup_val: float
    inf_val: float
    ratio: float
    bound: float
    s: float
    K: float
    constant: float                 # backsolved C with ratio = exp(C (1 + s sqrt K))
    values: np.ndarray = field(repr=False, default=None)


def _curvature_parameter(m):
    """``K >= 0`` with ``Ric >= -(n-1) K`` from the built-in curvature."""
    k = getattr(m, "curvature", None)
    return 0.0 if k is None else max(0.0, -float(k))


def dirichlet_harmonic(m, ops, boundary_values):
    """Discrete harmonic extension of boundary data (a full-length or boundary-only array)."""
    bvals = np.asarray(boundary_values, dtype=float)
    bmask = ~ops.interior_mask
    if len(bvals) == ops.n:
        bvals = bvals[bmask]
    a_ib, _ = ops.boundary_coupling
    rhs = -(a_ib @ bvals)
    u_int = cg_solve(SparseSystem(ops.interior_block, rhs), tol=1e-12)
    return ops.expand(u_int, bvals)


def harnack_ratio(m, p, s, boundary_sampler, K=None, constant=None):
    """Harnack ratio of a positive harmonic ``u`` on ``B_p(s)``.

    ``u`` solves the Dirichlet problem on ``B_p(2s)`` with data
    ``boundary_sampler(xy)`` on the ball's boundary vertices.  When
    ``constant`` is None the bound uses the backsolved constant itself,
    so the check is only meaningful across an ensemble.
    """
    if not s > 0:
        raise ParameterError("s must be positive")
    ball = restrict_submanifold(m, int(p), 2 * s)
    ops = assemble_operators(ball)
    p_ball = ball.nearest_vertex(m.vertices[int(p)])
    bxy = ball.vertices[~ops.interior_mask]
    data = np.asarray(boundary_sampler(bxy), dtype=float)
    if np.any(data < 0) or not np.any(data > 0):
        raise ParameterError("boundary data must be nonnegative and not identically zero")
    u = dirichlet_harmonic(ball, ops, data)
    if np.any(u[ops.interior_mask] <= 0):
        raise NumericError("harmonic extension is not positive inside the ball")
    inner = ball.distances_from(p_ball) <= s
    sup_val, inf_val = float(np.max(u[inner])), float(np.min(u[inner]))
    ratio = sup_val / inf_val
    K = _curvature_parameter(m) if K is None else float(K)
    growth = 1.0 + s * math.sqrt(K)
    c = math.log(ratio) / growth
    c_used = c if constant is None else float(constant)
    return HarnackReport(sup_val, inf_val, ratio, math.exp(c_used * growth), s, K, c, u)


def random_boundary_sampler(rng, lo=1.0, hi=2.0, modes=4):
    """Random trigonometric data on the boundary, mapped into ``[lo, hi]``."""
    coef = rng.uniform(-1, 1, size=(modes, 2))

    def sampler(xy):
        xy = np.asarray(xy, dtype=float)
        xy = xy - xy.mean(axis=0)
        th = np.arctan2(xy[:, 1], xy[:, 0])
        k = np.arange(1, modes + 1)[:, None]
        v = (coef[:, :1] * np.cos(k * th) + coef[:, 1:] * np.sin(k * th)).sum(axis=0)
        span = np.max(np.abs(v)) if np.any(v) else 1.0
        return lo + (hi - lo) * 0.5 * (1.0 + v / span)
    return sampler


@dataclass
class HarnackEnsemble:
    reports: list
    uniform_constant: float
    seed: int

    @property
    def ratios(self):
        return [r.ratio for r in self.reports]

    def bounded_by(self, c):
        return all(r.ratio <= math.exp(c * (1.0 + r.s * math.sqrt(r.K))) for r in self.reports)


def harnack_ensemble(m, p, s, n_samples=20, seed=0, jobs=1, lo=1.0, hi=2.0):
    """Harnack ratios for ``n_samples`` seeded random positive boundary data.

    The uniform constant is the largest backsolved C; by the Harnack
    inequality for data in ``[lo, hi]`` it cannot exceed ``ln(hi/lo)``.
    """
    streams = np.random.SeedSequence(seed).spawn(n_samples)
    samplers = [random_boundary_sampler(np.random.default_rng(st), lo, hi) for st in streams]

    def one(sampler):
        try:
            return harnack_ratio(m, p, s, sampler)
        except NumericError as exc:
            log.warning("Harnack sample rejected: %s", exc)
            return None
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(one, samplers))
    else:
        reports = [one(smp) for smp in samplers]
    reports = [r for r in reports if r is not None]
    if not reports:
        raise NumericError("every Harnack sample was rejected")
    return HarnackEnsemble(reports, max(r.constant for r in reports), int(seed))
