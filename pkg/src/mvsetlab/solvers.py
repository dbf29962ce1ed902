"""Sparse SPD solves and projected SOR for box-constrained quadratic programs.

``psor_lcp`` solves

    minimize 0.5 w.A.w - b.w   subject to  w <= upper   (or w >= lower)

which for an SPD ``A`` is the linear complementarity problem
``w <= psi, A w - b <= 0, (psi - w) * (A w - b) = 0``.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from numba import njit

from .errors import ConvergenceError, NumericError, ParameterError

log = logging.getLogger(__name__)

DEFAULT_OMEGA = 1.5
DEFAULT_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class SparseSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    upper: np.ndarray | None = None
    lower: np.ndarray | None = None

    def __post_init__(self):
        n = self.matrix.shape[0]
        if self.matrix.shape != (n, n) or len(self.rhs) != n:
            raise ParameterError("matrix and rhs sizes disagree")
        if np.any(self.matrix.diagonal() <= 0):
            raise ParameterError("matrix diagonal must be strictly positive")
        for bound in (self.upper, self.lower):
            if bound is not None and len(bound) != n:
                raise ParameterError("constraint length must match rhs")
        if self.upper is not None and self.lower is not None:
            raise ParameterError("only one-sided constraints are supported")


@dataclass(frozen=True)
class SolveReport:
    iterations: int
    final_residual: float
    complementarity_violation: float
    wall_time: float
    energies: tuple = ()

    def energy_monotone(self, rtol=1e-13):
        e = np.asarray(self.energies)
        if len(e) < 2:
            return True
        slack = rtol * max(1.0, float(np.max(np.abs(e))))
        return bool(np.all(np.diff(e) <= slack))


def cg_solve(system, tol=1e-10, x0=None, maxiter=None):
    """Jacobi-preconditioned conjugate gradients.

    Returns ``x`` with ``||A x - b||_2 <= tol ||b||_2``; raises
    ``ConvergenceError`` carrying the best iterate after ``10 n`` steps.
    """
    if not 0 < tol < 1:
        raise ParameterError("tol must lie in (0, 1)")
    A = system.matrix
    b = np.asarray(system.rhs, dtype=float)
    n = len(b)
    maxiter = 10 * n if maxiter is None else maxiter
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return np.zeros(n)
    dinv = 1.0 / A.diagonal()
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - A @ x
    z = dinv * r
    p = z.copy()
    rz = r @ z
    best, best_res = x.copy(), np.linalg.norm(r)
    for _ in range(maxiter + 1):
        res = np.linalg.norm(r)
        if res < best_res:
            best, best_res = x.copy(), res
        if res <= tol * bnorm:
            return x
        Ap = A @ p
        alpha = rz / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        z = dinv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise ConvergenceError(f"CG did not reach tol {tol:g} in {maxiter} iterations "
                           f"(best relative residual {best_res / bnorm:.3e})", best=best)


@njit(cache=True)
def _psor_sweeps(indptr, indices, data, diag, b, psi, w, omega, n_sweeps):
    n = len(b)
    for _ in range(n_sweeps):
        for i in range(n):
            acc = 0.0
            for k in range(indptr[i], indptr[i + 1]):
                acc += data[k] * w[indices[k]]
            val = w[i] + omega * (b[i] - acc) / diag[i]
            w[i] = val if val < psi[i] else psi[i]
    return w


def _energy(A, b, w):
    return 0.5 * float(w @ (A @ w)) - float(b @ w)


def complementarity_measure(A, b, psi, w):
    """Max-norm of ``min(psi - w, b - A w)``; zero exactly at the LCP solution."""
    return float(np.max(np.abs(np.minimum(psi - w, b - A @ w)), initial=0.0))


def psor_lcp(system, omega=DEFAULT_OMEGA, tol=DEFAULT_TOL, x0=None, max_sweeps=200_000,
             check_every=10, track_energy=False):
    """Projected SOR for ``min 0.5 w.A.w - b.w`` under a one-sided bound.

    Sweeps run in ascending index order.  Convergence is declared once
    ``max|min(psi - w, b - A w)| <= tol * scale`` with
    ``scale = max|b| / min(diag A)``.  The threshold never drops below a
    floating-point floor set by ``|A| |w|``, since residuals of larger
    iterates cannot be resolved more finely than that.
    """
    if not 0 < omega < 2:
        raise ParameterError("omega must lie in (0, 2)")
    if system.lower is not None:
        # w >= phi  <=>  (-w) <= -phi with the load negated
        flipped = SparseSystem(system.matrix, -np.asarray(system.rhs, dtype=float),
                               upper=-np.asarray(system.lower, dtype=float))
        start = None if x0 is None else -np.asarray(x0, dtype=float)
        w, rep = psor_lcp(flipped, omega, tol, start, max_sweeps, check_every, track_energy)
        return -w, rep

    t0 = time.perf_counter()
    A = sp.csr_matrix(system.matrix)
    A.sort_indices()
    b = np.ascontiguousarray(system.rhs, dtype=float)
    n = len(b)
    psi = np.full(n, np.inf) if system.upper is None else np.ascontiguousarray(system.upper, dtype=float)
    diag = A.diagonal().copy()
    offdiag = A - sp.diags(diag)
    if offdiag.nnz and offdiag.data.max() > 1e-12 * diag.max():
        log.warning("PSOR matrix is not an M-matrix (max off-diagonal %.3e)", offdiag.data.max())

    w = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    w = np.minimum(w, psi)
    if not (np.all(np.isfinite(b)) and np.all(np.isfinite(w)) and not np.any(np.isnan(psi))):
        raise NumericError("NaN or inf in PSOR load, bound or start")
    bmax = float(np.max(np.abs(b), initial=0.0))
    scale = bmax / float(diag.min()) if bmax > 0 else 1.0
    row_abs = np.asarray(abs(A).sum(axis=1)).ravel()

    def threshold(w):
        finite_w = np.where(np.isfinite(w), np.abs(w), 0.0)
        floor = 64 * np.finfo(float).eps * float(np.max(row_abs * np.maximum(finite_w, 1e-300),
                                                        initial=0.0))
        return max(tol * scale, floor)

    energies = [_energy(A, b, w)] if track_energy else []
    sweeps = 0
    step = 1 if track_energy else check_every
    viol = complementarity_measure(A, b, psi, w)
    while viol > threshold(w):
        if sweeps >= max_sweeps:
            rep = _report(A, b, psi, w, sweeps, t0, energies)
            raise ConvergenceError(f"PSOR did not converge in {max_sweeps} sweeps "
                                   f"(violation {viol:.3e})", best=w, report=rep)
        w = _psor_sweeps(A.indptr, A.indices, A.data, diag, b, psi, w, omega, step)
        sweeps += step
        if not np.all(np.isfinite(w)):
            raise NumericError("NaN or inf encountered in PSOR iterate")
        if track_energy:
            energies.append(_energy(A, b, w))
        viol = complementarity_measure(A, b, psi, w)
    return w, _report(A, b, psi, w, sweeps, t0, energies)


def _report(A, b, psi, w, sweeps, t0, energies):
    res = b - A @ w
    free = w < psi
    final = float(np.max(np.abs(res[free]), initial=0.0))
    return SolveReport(
        iterations=sweeps,
        final_residual=final,
        complementarity_violation=complementarity_measure(A, b, psi, w),
        wall_time=time.perf_counter() - t0,
        energies=tuple(energies),
    )


def active_set_lcp(system, x0=None, max_iter=200):
    """Primal-dual active set iteration for the upper-bound LCP.

    Finite termination on M-matrices; used to hand PSOR a starting point
    that is already (up to rounding) the exact discrete solution.
    """
    A = sp.csr_matrix(system.matrix)
    b = np.asarray(system.rhs, dtype=float)
    n = len(b)
    if system.upper is None:
        return spla.spsolve(A.tocsc(), b)
    psi = np.asarray(system.upper, dtype=float)
    c = A.diagonal()
    if x0 is None:
        w = spla.spsolve(A.tocsc(), b)
        mult = np.zeros(n)
    else:
        w = np.minimum(np.asarray(x0, dtype=float), psi)
        mult = np.maximum(b - A @ w, 0.0)
        mult[w < psi] = 0.0
    active = mult + c * (w - psi) > 0
    for it in range(max_iter):
        free = ~active
        w = psi.copy()
        if free.any():
            Aff = A[free][:, free].tocsc()
            rhs = b[free] - A[free][:, active] @ psi[active]
            w[free] = spla.spsolve(Aff, rhs)
        mult = np.zeros(n)
        mult[active] = (b - A @ w)[active]
        new_active = mult + c * (w - psi) > 0
        if np.array_equal(new_active, active):
            log.debug("active set converged after %d iterations", it + 1)
            return np.minimum(w, psi)
        active = new_active
    log.warning("active set iteration hit its cap of %d", max_iter)
    return np.minimum(w, psi)
