import math

import numpy as np
import pytest

from qgfs import (LinearSolveSettings, build_domain,
                  compute_boundary_constant, integrate, mass_tolerance,
                  psi2_solution, solve_constrained, solve_constrained_rhs,
                  solve_dirichlet, solve_time_derivative)
from qgfs import operators
from qgfs.errors import SolverError
from qgfs.geometry import ScalarField

from oracles import i0_series, i1_series, observed_orders, richardson


def test_zero_rhs_zero_boundary(rect64):
    psi = solve_dirichlet(rect64, rect64.field(0.0), 0.0)
    assert np.nanmax(np.abs(psi.values)) == 0.0


def test_manufactured_sin_convergence():
    errs = []
    for n in (33, 65, 129):
        dom = build_domain("rectangle", nx=n, ny=n, lx=np.pi, ly=np.pi)
        rhs = dom.field(lambda x, y: -3.0 * np.sin(x) * np.sin(y))
        psi = solve_dirichlet(dom, rhs, 0.0)
        exact = dom.field(lambda x, y: np.sin(x) * np.sin(y))
        errs.append(float(np.nanmax(np.abs(psi.values - exact.values))))
    assert min(observed_orders(errs)) >= 1.9


def test_disk_psi2_matches_bessel_oracle(disk129):
    psi2, i2 = psi2_solution(disk129)
    r = np.hypot(disk129.X, disk129.Y)
    exact = i0_series(r) / i0_series(1.0)
    err = np.max(np.abs((psi2.values - exact)[disk129.interior_mask]))
    assert err <= 0.5 * disk129.hx
    center = psi2.values[disk129.ny // 2, disk129.nx // 2]
    assert abs(center - 1.0 / i0_series(1.0)) <= 0.1 * disk129.hx
    assert i2 > 0


def test_psi2_maximum_principle(rect64, disk129):
    for dom in (rect64, disk129):
        psi2, _ = psi2_solution(dom)
        interior = psi2.interior()
        assert np.min(interior) > 0.0
        assert np.max(interior) <= 1.0
        assert np.all(psi2.boundary() == 1.0)


def test_discrete_monotonicity(rect64):
    # rhs <= 0 with zero boundary data implies psi >= 0
    rng = np.random.default_rng(11)
    rhs = rect64.field(-np.abs(rng.standard_normal(rect64.X.shape)))
    psi = solve_dirichlet(rect64, rhs, 0.0)
    assert np.nanmin(psi.values) >= -1e-10


def test_boundary_constant_trivial_cases(rect64):
    psi2, _ = psi2_solution(rect64)
    zero = rect64.field(0.0)
    assert compute_boundary_constant(zero, psi2) == 0.0
    assert abs(compute_boundary_constant(psi2, psi2) + 1.0) <= 1e-15


def test_boundary_constant_rejects_bad_psi2(rect64):
    bad = rect64.field(-1.0)
    with pytest.raises(SolverError):
        compute_boundary_constant(rect64.field(1.0), bad)


def test_boundary_constant_richardson_oracle():
    # I2 = int(psi2) extrapolated from refined grids; l = -int(psi1)/I2
    i2_fine = {}
    for n in (129, 257):
        dom = build_domain("rectangle", nx=n, ny=n, lx=np.pi, ly=np.pi)
        i2_fine[n] = psi2_solution(dom)[1]
    i2_star = richardson(i2_fine[129], i2_fine[257])
    dom = build_domain("rectangle", nx=65, ny=65, lx=np.pi, ly=np.pi)
    psi1 = dom.field(lambda x, y: np.sin(x) * np.sin(y))
    psi2, _ = psi2_solution(dom)
    l = compute_boundary_constant(psi1, psi2)
    expected = -integrate(psi1) / i2_star
    assert abs(l - expected) <= 1e-3 * abs(expected)


def test_l_matches_independent_quadrature(disk_const_sol):
    q, sol = disk_const_sol
    dom = sol.domain
    m = dom.valued_mask
    i1 = math.fsum((sol.psi1.values[m] * dom.weights[m]).tolist())
    i2 = math.fsum((sol.psi2.values[m] * dom.weights[m]).tolist())
    assert abs(sol.l - (-i1 / i2)) <= 1e-12 * abs(sol.l)


def test_constrained_rest_state(rect64):
    q = rect64.field(lambda x, y: y)
    sol = solve_constrained(rect64, q)
    assert np.nanmax(np.abs(sol.psi.values)) == 0.0
    assert sol.l == 0.0


def test_constrained_disk_bessel_case(disk_const_sol):
    q, sol = disk_const_sol
    dom = sol.domain
    r = np.hypot(dom.X, dom.Y)
    psi1_exact = i0_series(r) / i0_series(1.0) - 1.0
    err = np.max(np.abs((sol.psi1.values - psi1_exact)[dom.interior_mask]))
    assert err <= 0.5 * dom.hx
    l_exact = -1.0 + i0_series(1.0) / (2.0 * i1_series(1.0))
    assert abs(sol.l - l_exact) <= 0.1 * dom.hx
    # radial symmetry of the composed field
    j = dom.ny // 2
    i = dom.nx // 2
    k = dom.nx // 4
    assert abs(sol.psi.values[j, k] - sol.psi.values[k, i]) <= 1e-10


def test_constrained_invariants(disk_const_sol, rect64):
    q, sol = disk_const_sol
    cases = [sol, solve_constrained(rect64, rect64.field(
        lambda x, y: y + np.sin(2 * x) * np.sin(y)))]
    for s in cases:
        dom = s.domain
        assert s.mass_residual() <= mass_tolerance(dom)
        assert s.boundary_deviation() == 0.0
        assert s.integral_psi2 > 0
        comp = s.psi1.values + s.l * s.psi2.values
        assert np.nanmax(np.abs(s.psi.values - comp)) <= 1e-14


def test_constrained_operator_residual(disk_const_sol):
    q, sol = disk_const_sol
    dom = sol.domain
    res = operators.apply_helmholtz(sol.psi).values
    rhs = q.values - dom.Y
    rel = (np.max(np.abs((res - rhs)[dom.interior_mask]))
           / np.max(np.abs(rhs[dom.interior_mask])))
    assert rel <= 1e-6


def test_solver_failure_reports_residual(rect64):
    settings = LinearSolveSettings(tolerance=1e-12, max_iterations=3)
    rhs = rect64.field(lambda x, y: np.exp(-4 * ((x - 1) ** 2
                                                 + (y - 2) ** 2)))
    with pytest.raises(SolverError) as err:
        solve_dirichlet(rect64, rhs, 0.0, settings)
    assert err.value.residual is not None and err.value.residual > 1e-12


def test_direct_method_matches_cg(rect64):
    rhs = rect64.field(lambda x, y: np.sin(2 * x) * np.sin(y))
    a = solve_dirichlet(rect64, rhs, 0.0)
    b = solve_dirichlet(rect64, rhs, 0.0,
                        LinearSolveSettings(method="direct"))
    assert np.nanmax(np.abs(a.values - b.values)) <= 1e-8


def test_time_derivative_zero_velocity(rect64):
    q = rect64.field(lambda x, y: y)       # psi = 0, u = 0
    sol = solve_constrained(rect64, q)
    dsol = solve_time_derivative(rect64, sol, q)
    assert np.nanmax(np.abs(dsol.psi.values)) == 0.0


def test_time_derivative_reduces_to_constrained(rect64):
    # with u = 0 the tendency problem is the constrained solve of curl F
    q = rect64.field(lambda x, y: y)
    sol = solve_constrained(rect64, q)
    F = rect64.vector_field(lambda x, y: 0.0 * x,
                            lambda x, y: np.sin(x) * np.sin(y))
    dsol = solve_time_derivative(rect64, sol, q, F)
    rhs = operators.curl(F).values
    ref = solve_constrained_rhs(rect64, np.where(rect64.valued_mask, rhs,
                                                 0.0))
    assert np.nanmax(np.abs(dsol.psi.values - ref.psi.values)) <= 1e-13


def test_time_derivative_steady_radial_decays():
    # radial PV with beta = 0 is steady; the tendency is discretization error
    import sympy as sp
    x, y = sp.symbols("x y")
    psi_e = (1 - (x ** 2 + y ** 2)) ** 2 - sp.Rational(1, 3)
    q_e = sp.diff(psi_e, x, 2) + sp.diff(psi_e, y, 2) - psi_e
    qf = sp.lambdify((x, y), q_e, "numpy")
    maxima = []
    for n in (65, 129):
        dom = build_domain("disk", nx=n, ny=n, radius=1.0)
        q = dom.field(lambda X, Y: qf(X, Y))
        sol = solve_constrained(dom, q, beta=0.0)
        dsol = solve_time_derivative(dom, sol, q)
        maxima.append(dsol.psi.max_abs())
    assert maxima[0] <= 5e-4
    assert maxima[1] <= 0.6 * maxima[0]


def test_psi2_cache_reused(rect64):
    a, _ = psi2_solution(rect64)
    b, _ = psi2_solution(rect64)
    assert a is b


def test_settings_validation():
    with pytest.raises(ValueError):
        LinearSolveSettings(tolerance=0.0)
    with pytest.raises(ValueError):
        LinearSolveSettings(max_iterations=0)
    with pytest.raises(ValueError):
        LinearSolveSettings(method="multigrid")
