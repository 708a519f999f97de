import numpy as np
import pytest

from qgfs import (area_check, build_domain, cell_seed_grid, integrate_rk4,
                  picard_iterate, solve_constrained, velocity_from_stream)
from qgfs import operators
from qgfs.errors import PicardConvergenceError, TrajectoryEscapeError
from qgfs.flowmap import PiecewiseVelocity

from oracles import observed_orders


def rotation(p, t):
    return np.column_stack([-p[:, 1], p[:, 0]])


def test_velocity_constant_stream(rect64):
    q = rect64.field(lambda x, y: y)        # psi = 0
    sol = solve_constrained(rect64, q)
    u = velocity_from_stream(sol)
    assert u.max_norm() == 0.0


def test_velocity_solid_body(rect64):
    # psi = (x^2 + y^2)/2 -> u = (-y, x); centered differences are exact
    # on quadratics
    psi = rect64.field(lambda x, y: 0.5 * (x ** 2 + y ** 2))
    u = operators.perp_gradient(psi)
    m = rect64.interior_mask
    assert np.max(np.abs(u.u[m] + rect64.Y[m])) <= 1e-12
    assert np.max(np.abs(u.v[m] - rect64.X[m])) <= 1e-12


def test_velocity_tangential_on_disk_boundary():
    vals = []
    for n in (65, 129):
        dom = build_domain("disk", nx=n, ny=n, radius=1.0)
        sol = solve_constrained(dom, dom.field(lambda x, y: 1.0 + y))
        u = velocity_from_stream(sol)
        normals = operators.boundary_normals(dom)
        ub = np.column_stack([u.u[dom.boundary_mask],
                              u.v[dom.boundary_mask]])
        vals.append(np.max(np.abs(np.sum(ub * normals, axis=1))))
    assert vals[0] <= 0.1 * 2.0 / 64        # C*h with measured C
    assert vals[1] <= 0.75 * vals[0]


def test_rk4_rotation_quarter_turn():
    errs = []
    for dt in (0.1, 0.05, 0.025):
        tr = integrate_rk4(rotation, [[1.0, 0.0]], 0.0, np.pi / 2, dt)
        errs.append(float(np.hypot(tr.positions[0, 0],
                                   tr.positions[0, 1] - 1.0)))
    assert min(observed_orders(errs)) >= 3.8


def test_rk4_zero_field_identity():
    seeds = np.array([[0.3, 0.4], [-0.2, 0.1]])
    tr = integrate_rk4(lambda p, t: np.zeros_like(p), seeds, 0.0, 1.0, 0.1)
    assert np.array_equal(tr.positions, seeds)
    assert np.all(tr.status == 0)


def test_rk4_polynomial_shear_exact():
    tr = integrate_rk4(lambda p, t: np.column_stack(
        [p[:, 1], np.zeros(p.shape[0])]), [[0.3, 0.4]], 0.0, 1.0, 0.25)
    assert np.max(np.abs(tr.positions[0] - [0.7, 0.4])) <= 1e-13


def test_rk4_backward_and_partial_steps():
    tr = integrate_rk4(rotation, [[1.0, 0.0]], 0.0, -0.3, 0.07)
    exact = np.array([np.cos(0.3), -np.sin(0.3)])
    assert np.max(np.abs(tr.positions[0] - exact)) <= 1e-7


def test_group_property_and_back_forth(disk129):
    sol = solve_constrained(disk129, disk129.field(
        lambda x, y: y + np.exp(-6 * ((x - 0.3) ** 2 + y ** 2))))
    u = velocity_from_stream(sol)
    seeds = np.array([[0.2, 0.1], [-0.3, 0.25], [0.1, -0.4]])
    # deliberately non-aligned dt so step sequences differ
    t1 = integrate_rk4(u, seeds, 0.0, 0.25, 0.013, domain=disk129)
    t2 = integrate_rk4(u, t1.positions, 0.25, 0.5, 0.013, domain=disk129)
    t3 = integrate_rk4(u, seeds, 0.0, 0.5, 0.013, domain=disk129)
    assert np.max(np.hypot(*(t2.positions - t3.positions).T)) <= 1e-8
    back = integrate_rk4(u, t3.positions, 0.5, 0.0, 0.013, domain=disk129)
    assert np.max(np.hypot(*(back.positions - seeds).T)) <= 1e-8


def test_escape_raises_with_seed_index(rect64):
    outward = lambda p, t: np.ones_like(p)
    with pytest.raises(TrajectoryEscapeError) as err:
        integrate_rk4(outward, [[3.0, 3.0]], 0.0, 2.0, 0.5, domain=rect64)
    assert err.value.seed_indices == (0,)


def test_picard_zero_field_converges_immediately():
    seeds = np.array([[0.1, 0.2], [0.3, -0.1]])
    flow, trace = picard_iterate(lambda p, t: np.zeros_like(p), seeds,
                                 0.5, 0.1, tol=1e-14)
    assert trace.converged
    assert len(trace.rho) == 1 and trace.rho[0] == 0.0
    assert np.array_equal(flow.positions, seeds)


def test_picard_rotation_decay():
    g = np.linspace(-0.5, 0.5, 8)
    X, Y = np.meshgrid(g, g)
    seeds = np.column_stack([X.ravel(), Y.ravel()])
    flow, trace = picard_iterate(rotation, seeds, 0.4, 0.005, k_max=60,
                                 tol=1e-13)
    rho = np.array(trace.rho)
    ks = np.arange(1, rho.size + 1)
    slope = np.polyfit(ks[rho > 0], np.log(rho[rho > 0]), 1)[0]
    assert np.exp(slope) <= 0.6
    e = np.array(trace.e)
    assert np.all(np.diff(e) <= 1e-15)
    # final positions match the exact rotation
    exact = seeds @ np.array([[np.cos(0.4), np.sin(0.4)],
                              [-np.sin(0.4), np.cos(0.4)]])
    assert np.max(np.hypot(*(flow.positions - exact).T)) <= 1e-6


def test_picard_envelope_shape():
    # e_k <= A (1/2)^k / k^{3/2} + B exp(-k/2): constants fitted on the
    # first half of the iterates must cover the tail
    g = np.linspace(-0.5, 0.5, 8)
    X, Y = np.meshgrid(g, g)
    seeds = np.column_stack([X.ravel(), Y.ravel()])
    _, trace = picard_iterate(rotation, seeds, 0.4, 0.005, k_max=60,
                              tol=1e-13)
    e = np.array(trace.e)
    ks = np.arange(1.0, e.size + 1)
    half = max(2, e.size // 2)
    A = np.max(e[:half] * 2.0 ** ks[:half] * ks[:half] ** 1.5)
    B = np.max(e[:half] * np.exp(ks[:half] / 2))
    bound = A * 0.5 ** ks / ks ** 1.5 + B * np.exp(-ks / 2)
    assert np.all(e <= bound * (1 + 1e-12))


def test_picard_nonconvergence_carries_trace():
    seeds = np.array([[0.4, 0.0]])
    with pytest.raises(PicardConvergenceError) as err:
        picard_iterate(rotation, seeds, 0.4, 0.01, k_max=3, tol=1e-15)
    assert err.value.trace is not None
    assert len(err.value.trace.rho) == 3


def test_area_check_rotation_and_rest(disk65):
    seeds, cells, _ = cell_seed_grid(disk65, n_cells=8)
    tr = integrate_rk4(rotation, seeds, 0.0, 0.5, 0.05)
    ratios = area_check(tr, cells)
    assert np.max(np.abs(ratios - 1.0)) <= 1e-8
    tr0 = integrate_rk4(lambda p, t: np.zeros_like(p), seeds, 0.0, 0.5, 0.05)
    assert np.array_equal(area_check(tr0, cells), np.ones(len(cells)))


def test_area_check_solved_field_reference_and_refinement():
    seeds = cells = None
    errs = []
    for n in (97, 193):
        dom = build_domain("disk", nx=n, ny=n, radius=1.0)
        sol = solve_constrained(dom, dom.field(lambda x, y: 1.0 + y))
        u = velocity_from_stream(sol)
        if seeds is None:
            seeds, cells, _ = cell_seed_grid(dom, n_cells=10)
        tr = integrate_rk4(u, seeds, 0.0, 0.5, 0.02, domain=dom)
        errs.append(float(np.max(np.abs(area_check(tr, cells) - 1.0))))
    assert errs[0] <= 5e-3           # reference resolution
    assert errs[1] < errs[0]         # improves under refinement


def test_area_check_rejects_degenerate_cells():
    seeds = np.array([[0.0, 0.0], [0.1, 0.0], [0.2, 0.0], [0.3, 0.0]])
    tr = integrate_rk4(lambda p, t: np.zeros_like(p), seeds, 0.0, 0.1, 0.1)
    with pytest.raises(ValueError):
        area_check(tr, np.array([[0, 1, 2, 3]]))


def test_piecewise_velocity_lookup(rect64):
    f0 = rect64.vector_field(1.0, 0.0)
    f1 = rect64.vector_field(2.0, 0.0)
    pv = PiecewiseVelocity([0.0, 1.0], [f0, f1], mode="constant")
    assert pv(0.0) is f0
    assert pv(0.5) is f0
    assert pv(1.0) is f1
    lin = PiecewiseVelocity([0.0, 1.0], [f0, f1], mode="linear")
    mid = lin(0.5)
    assert abs(mid.u[5, 5] - 1.5) <= 1e-15


def test_quasi_lipschitz_pair_separation(disk129):
    # Osgood phenomenology: measured doubling times of pair separations
    # stay above the bound implied by the empirical quasi-Lipschitz constant
    from qgfs.diagnostics import quasi_lipschitz_check
    import math
    dom = disk129
    q = dom.field(lambda x, y: y + 4 * np.exp(-6 * ((x - 0.3) ** 2
                                                    + y ** 2)))
    sol = solve_constrained(dom, q)
    u = velocity_from_stream(sol)
    denom = float(np.max(np.abs((q.values - dom.Y)[dom.valued_mask])))
    c_eff = quasi_lipschitz_check(u, q, samples=3000).max_ratio * denom
    rng = np.random.default_rng(7)
    horizon = 2.0
    for delta in (1e-4, 1e-3, 1e-2):
        t_double = []
        for _ in range(6):
            base = rng.uniform(-0.4, 0.4, 2)
            ang = rng.uniform(0, 2 * np.pi)
            seeds = np.array([base, base + delta * np.array(
                [np.cos(ang), np.sin(ang)])])
            tr = integrate_rk4(u, seeds, 0.0, horizon, 0.01, domain=dom,
                               record_path=True)
            sep = np.hypot(tr.path[:, 0, 0] - tr.path[:, 1, 0],
                           tr.path[:, 0, 1] - tr.path[:, 1, 1])
            hit = np.nonzero(sep >= 2 * delta)[0]
            t_double.append(tr.times[hit[0]] if hit.size else np.inf)
        osgood_lb = math.log((1 - math.log(delta))
                             / (1 - math.log(2 * delta))) / c_eff
        assert min(t_double) >= 0.5 * osgood_lb
