"""The free-surface elliptic problem: (Laplacian - I) psi = q - beta*y with an
unknown constant boundary value and zero mean.

The solve decomposes psi = psi1 + l*psi2: psi1 carries the data with zero
boundary values, psi2 solves the homogeneous problem with unit boundary data
(computed once per domain and cached), and l = -int(psi1)/int(psi2) enforces
the mass constraint.  The discrete operator is the 5-point Laplacian minus
identity; negated it is symmetric positive definite, so the default solver is
plain conjugate gradients.  All CG inner products use numpy's fixed-order
pairwise sum rather than BLAS dots, which keeps results bit-identical across
thread settings.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import operators
from .errors import SolverError
from .geometry import Domain, ScalarField, VectorField, integrate

DEFAULT_MASS_TOL_FACTOR = 1e-8


@dataclass(frozen=True)
class LinearSolveSettings:
    """Linear solver controls: relative residual target, budget, method."""

    tolerance: float = 1e-10
    max_iterations: int = 50000
    method: str = "cg"          # "cg" | "direct"

    def __post_init__(self):
        if not 0.0 < self.tolerance < 1.0:
            raise ValueError(f"tolerance must lie in (0, 1), got {self.tolerance}")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.method not in ("cg", "direct"):
            raise ValueError(f"unknown linear solver method {self.method!r}")


DEFAULT_SETTINGS = LinearSolveSettings()


@dataclass(frozen=True)
class StreamSolution:
    """psi = psi1 + l*psi2 with its boundary constant and cached psi2 data."""

    psi: ScalarField
    l: float
    psi1: ScalarField
    psi2: ScalarField
    integral_psi2: float

    @property
    def domain(self) -> Domain:
        return self.psi.domain

    def mass_residual(self) -> float:
        return abs(integrate(self.psi))

    def boundary_deviation(self) -> float:
        """Max |psi - l| over boundary nodes (exactly zero by construction)."""
        return float(np.max(np.abs(self.psi.boundary() - self.l)))


def mass_tolerance(domain: Domain) -> float:
    return DEFAULT_MASS_TOL_FACTOR * domain.area


# ----------------------------------------------------------------------
# discrete system


def _system(domain: Domain):
    """Cached (SPD matrix, boundary coupling, diagonal, index) for I - Lap.

    Unknowns live at interior nodes.  Arms to interior neighbors carry the
    usual -1/h^2 couplings; arms that meet the boundary at a fraction theta
    of the spacing are eliminated by linear extrapolation through the
    boundary value, which leaves the matrix symmetric (coefficient 1/(theta
    h^2) on the diagonal and on the right-hand side).  The boundary value is
    a single constant here, so ``cvec`` multiplies it per row.
    """
    with domain._cache_lock:
        sys_ = domain._cache.get("helmholtz_system")
        if sys_ is not None:
            return sys_

        ny, nx = domain.ny, domain.nx
        interior = domain.interior_mask
        boundary = domain.boundary_mask
        idx = -np.ones((ny, nx), dtype=np.int64)
        n = int(interior.sum())
        idx[interior] = np.arange(n)

        cj, ci = np.nonzero(interior)
        ax = 1.0 / domain.hx ** 2
        ay = 1.0 / domain.hy ** 2

        diag = np.ones(n)
        rows, cols, vals = [], [], []
        cvec = np.zeros(n)
        arms = (((0, 1), ax, "xp"), ((0, -1), ax, "xm"),
                ((1, 0), ay, "yp"), ((-1, 0), ay, "ym"))
        for (dj, di), a, key in arms:
            nj, ni = cj + dj, ci + di
            th = domain.cut_theta[key][cj, ci]
            nb_int = interior[nj, ni]
            nb_bdy = boundary[nj, ni]
            if not np.all(nb_int | nb_bdy):
                raise SolverError("interior node with an exterior neighbor; "
                                  "domain classification is inconsistent")
            rows.append(idx[cj[nb_int], ci[nb_int]])
            cols.append(idx[nj[nb_int], ni[nb_int]])
            vals.append(np.full(int(nb_int.sum()), -a))
            np.add.at(diag, idx[cj[nb_int], ci[nb_int]],
                      np.full(int(nb_int.sum()), a))
            coef = a / th[nb_bdy]
            np.add.at(cvec, idx[cj[nb_bdy], ci[nb_bdy]], coef)
            np.add.at(diag, idx[cj[nb_bdy], ci[nb_bdy]], coef)

        rows.append(np.arange(n))
        cols.append(np.arange(n))
        vals.append(diag)
        M = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n, n))
        sys_ = (M, cvec, 1.0 / diag, idx)
        domain._cache["helmholtz_system"] = sys_
        return sys_


def _dot(a, b):
    # fixed-order pairwise reduction; never BLAS (thread-count independent)
    return float(np.sum(a * b))


def _cg(M, b, x0, tol, maxiter, inv_diag):
    """Jacobi-preconditioned CG; the diagonal varies along cut-cell rows."""
    bnorm = np.sqrt(_dot(b, b))
    if bnorm == 0.0:
        return np.zeros_like(b), 0.0, 0
    x = np.zeros_like(b) if x0 is None else x0.astype(float).copy()
    r = b - M @ x
    z = inv_diag * r
    p = z.copy()
    rz = _dot(r, z)
    target = tol * bnorm
    it = 0
    while np.sqrt(_dot(r, r)) > target and it < maxiter:
        Mp = M @ p
        alpha = rz / _dot(p, Mp)
        x += alpha * p
        r -= alpha * Mp
        z = inv_diag * r
        rz_new = _dot(r, z)
        p = z + (rz_new / rz) * p
        rz = rz_new
        it += 1
    # recompute the true residual; iterated r can drift
    res = b - M @ x
    rel = np.sqrt(_dot(res, res)) / bnorm
    return x, rel, it


def _lu(domain, M):
    with domain._cache_lock:
        lu = domain._cache.get("helmholtz_lu")
        if lu is None:
            lu = spla.splu(M.tocsc())
            domain._cache["helmholtz_lu"] = lu
        return lu


def solve_dirichlet(domain: Domain, rhs, boundary_value: float,
                    settings: LinearSolveSettings = DEFAULT_SETTINGS,
                    x0=None) -> ScalarField:
    """Solve (Laplacian - I) psi = rhs with constant Dirichlet data.

    ``rhs`` is a ScalarField or an (ny, nx) array defined at interior nodes.
    The boundary value is injected exactly; the interior system is solved to
    the settings' relative residual.  ``x0`` optionally warm-starts CG with
    an interior vector.
    """
    M, cvec, inv_diag, idx = _system(domain)
    rhs_vals = rhs.values if isinstance(rhs, ScalarField) else np.asarray(rhs)
    b = -rhs_vals[domain.interior_mask] + boundary_value * cvec

    if settings.method == "direct":
        x = _lu(domain, M).solve(b)
        bnorm = np.sqrt(_dot(b, b))
        res = b - M @ x
        rel = np.sqrt(_dot(res, res)) / bnorm if bnorm > 0 else 0.0
        it = 1
    else:
        x, rel, it = _cg(M, b, x0, settings.tolerance,
                         settings.max_iterations, inv_diag)
    if rel > settings.tolerance:
        raise SolverError(
            f"linear solve stalled at relative residual {rel:.3e} after "
            f"{it} iterations (target {settings.tolerance:.1e})",
            residual=rel, iterations=it)

    out = np.full((domain.ny, domain.nx), np.nan)
    out[domain.interior_mask] = x
    out[domain.boundary_mask] = boundary_value
    return ScalarField(domain, out)


def psi2_solution(domain: Domain,
                  settings: LinearSolveSettings = DEFAULT_SETTINGS):
    """The homogeneous unit-boundary solution psi2 and its integral, cached.

    psi2 is independent of the data q, so one solve per domain serves every
    constrained solve; cache population is synchronized.
    """
    key = ("psi2", settings.method, settings.tolerance)
    with domain._cache_lock:
        hit = domain._cache.get(key)
    if hit is not None:
        return hit
    psi2 = solve_dirichlet(domain, np.zeros((domain.ny, domain.nx)), 1.0,
                           settings)
    val = (psi2, integrate(psi2))
    with domain._cache_lock:
        domain._cache.setdefault(key, val)
        return domain._cache[key]


def compute_boundary_constant(psi1: ScalarField, psi2: ScalarField) -> float:
    """l = -int(psi1) / int(psi2) (mass conservation closure)."""
    if psi1.domain is not psi2.domain:
        raise ValueError("psi1 and psi2 live on different domains")
    i2 = integrate(psi2)
    if i2 <= 0.0:
        raise SolverError(
            f"int(psi2) = {i2:.3e} <= 0 violates the maximum principle; "
            "the homogeneous solve is broken")
    return -integrate(psi1) / i2


def solve_constrained_rhs(domain: Domain, rhs,
                          settings: LinearSolveSettings = DEFAULT_SETTINGS,
                          x0=None) -> StreamSolution:
    """Constrained solve with an explicit right-hand side (no beta term)."""
    psi2, i2 = psi2_solution(domain, settings)
    if i2 <= 0.0:
        raise SolverError(f"int(psi2) = {i2:.3e} <= 0; maximum principle violated")
    psi1 = solve_dirichlet(domain, rhs, 0.0, settings, x0=x0)
    l = -integrate(psi1) / i2
    psi = ScalarField(domain, psi1.values + l * psi2.values)
    return StreamSolution(psi=psi, l=l, psi1=psi1, psi2=psi2,
                          integral_psi2=i2)


def solve_constrained(domain: Domain, q: ScalarField,
                      settings: LinearSolveSettings = DEFAULT_SETTINGS,
                      beta: float = 1.0, x0=None) -> StreamSolution:
    """Solve the PV inversion (Laplacian - I) psi = q - beta*y, psi=l on the
    boundary, int(psi) = 0."""
    rhs = q.values - beta * domain.Y
    return solve_constrained_rhs(domain, rhs, settings, x0=x0)


def solve_time_derivative(domain: Domain, psi_sol: StreamSolution,
                          q: ScalarField, F: VectorField | None = None,
                          settings: LinearSolveSettings = DEFAULT_SETTINGS,
                          ) -> StreamSolution:
    """Solve (Laplacian - I) d(psi)/dt = curl F - div(u q) for the stream
    tendency, with the same constant-boundary/zero-mean closure.

    The flux divergence uses centered differences of u*q with the shared
    stencils; u is the perp-gradient of the supplied stream solution.
    """
    u = operators.perp_gradient(psi_sol.psi)
    flux = VectorField(domain, u.u * q.values, u.v * q.values)
    rhs = -operators.divergence(flux).values
    if F is not None:
        rhs = rhs + operators.curl(F).values
    rhs = np.where(domain.valued_mask, rhs, 0.0)
    return solve_constrained_rhs(domain, rhs, settings)
