import numpy as np
import pytest

from qgfs import build_domain, integrate, interpolate
from qgfs.errors import GeometryError
from qgfs.geometry import BOUNDARY, EXTERIOR, INTERIOR

from oracles import observed_orders


def test_rectangle_area_exact():
    dom = build_domain("rectangle", nx=64, ny=64, lx=np.pi, ly=np.pi)
    total = float(np.sum(dom.weights))
    assert abs(total - np.pi ** 2) <= 1e-13 * np.pi ** 2


def test_disk_area_within_2h():
    for n in (65, 129):
        dom = build_domain("disk", nx=n, ny=n, radius=1.0)
        total = float(np.sum(dom.weights))
        assert abs(total - np.pi) / np.pi <= 2 * dom.hx
    # refinement actually improves the estimate
    coarse = abs(np.sum(build_domain("disk", nx=65, ny=65,
                                     radius=1.0).weights) - np.pi)
    fine = abs(np.sum(build_domain("disk", nx=129, ny=129,
                                   radius=1.0).weights) - np.pi)
    assert fine < coarse


@pytest.mark.parametrize("kwargs", [
    dict(shape="rectangle", nx=64, ny=64, lx=0.0, ly=1.0),
    dict(shape="rectangle", nx=64, ny=64, lx=-1.0, ly=1.0),
    dict(shape="disk", nx=64, ny=64, radius=0.0),
    dict(shape="rectangle", nx=4, ny=64, lx=1.0, ly=1.0),
    dict(shape="nonsense", nx=64, ny=64),
])
def test_build_domain_rejects_bad_specs(kwargs):
    with pytest.raises(GeometryError):
        build_domain(**kwargs)


def test_classification_invariants(disk65, rect64):
    for dom in (disk65, rect64):
        dom.validate()
        st = dom.status
        inner = st[1:-1, 1:-1]
        for nb in (st[:-2, 1:-1], st[2:, 1:-1], st[1:-1, :-2],
                   st[1:-1, 2:]):
            assert not np.any((inner == INTERIOR) & (nb == EXTERIOR))
    assert np.all(np.isin(disk65.status, [EXTERIOR, INTERIOR, BOUNDARY]))


def test_cut_fractions_in_range(disk65):
    for arr in disk65.cut_theta.values():
        assert np.all(arr > 0) and np.all(arr <= 1.0)
    # at least some arms are genuinely cut
    assert any(np.any(arr < 1.0) for arr in disk65.cut_theta.values())


def test_integrate_constant_and_product(rect64):
    one = rect64.field(1.0)
    assert abs(integrate(one) - np.pi ** 2) <= 1e-13 * np.pi ** 2
    ss = rect64.field(lambda x, y: np.sin(x) * np.sin(y))
    # trapezoid error constant measured at 2/3 h^2
    assert abs(integrate(ss) - 4.0) <= 0.7 * rect64.hx ** 2


def test_integrate_odd_symmetry_disk(disk65):
    fx = disk65.field(lambda x, y: x)
    assert abs(integrate(fx)) <= 1e-12


def test_integrate_deterministic(disk65):
    rng = np.random.default_rng(0)
    vals = np.where(disk65.valued_mask,
                    rng.standard_normal(disk65.X.shape), np.nan)
    f = disk65.field(vals)
    assert integrate(f) == integrate(f)


def test_interpolate_constant_and_linear(rect64):
    c = rect64.field(3.25)
    assert interpolate(c, (0.7, 1.3)) == 3.25
    lin = rect64.field(lambda x, y: 2 * x + 3 * y)
    pts = np.array([[0.31, 0.77], [2.5, 3.0], [np.pi / 2, 0.01]])
    exact = 2 * pts[:, 0] + 3 * pts[:, 1]
    assert np.max(np.abs(interpolate(lin, pts) - exact)) <= 1e-12


def test_interpolation_orders():
    errs = {"bilinear": [], "bicubic": []}
    for n in (33, 65, 129):
        dom = build_domain("rectangle", nx=n, ny=n, lx=np.pi, ly=np.pi)
        f = dom.field(lambda x, y: np.sin(x) * np.sin(y))
        pt = np.array([np.pi / 2 + 0.3 * dom.hx, np.pi / 2 + 0.3 * dom.hy])
        exact = np.sin(pt[0]) * np.sin(pt[1])
        for order in errs:
            errs[order].append(abs(interpolate(f, pt, order) - exact))
    assert min(observed_orders(errs["bilinear"])) >= 1.9
    assert min(observed_orders(errs["bicubic"])) >= 2.9


def test_bilinear_stays_within_stencil(rect64):
    rng = np.random.default_rng(1)
    vals = rng.standard_normal(rect64.X.shape)
    f = rect64.field(vals)
    pts = np.column_stack([rng.uniform(0, np.pi, 10000),
                           rng.uniform(0, np.pi, 10000)])
    out = interpolate(f, pts)
    ix = np.clip((pts[:, 0] / rect64.hx).astype(int), 0, rect64.nx - 2)
    iy = np.clip((pts[:, 1] / rect64.hy).astype(int), 0, rect64.ny - 2)
    corners = np.stack([vals[iy, ix], vals[iy, ix + 1],
                        vals[iy + 1, ix], vals[iy + 1, ix + 1]])
    assert np.all(out >= corners.min(axis=0))
    assert np.all(out <= corners.max(axis=0))


def test_interpolate_disk_near_boundary(disk65):
    f = disk65.field(lambda x, y: x)
    # points hugging the rim still interpolate to O(h)
    ang = np.linspace(0, 2 * np.pi, 37)
    pts = 0.999 * np.column_stack([np.cos(ang), np.sin(ang)])
    out = interpolate(f, pts)
    assert np.max(np.abs(out - pts[:, 0])) <= 1.5 * disk65.hx


def test_interpolate_rejects_far_outside(rect64, disk65):
    f = rect64.field(1.0)
    with pytest.raises(GeometryError):
        interpolate(f, (np.pi + 10 * rect64.hx, 1.0))
    g = disk65.field(1.0)
    with pytest.raises(GeometryError):
        interpolate(g, (1.0 + 10 * disk65.hx, 0.0))


def test_project_inside_clamps_marginal_points(disk65):
    pts = np.array([[1.0 + 0.5 * disk65.hx, 0.0], [0.2, 0.1]])
    proj, moved = disk65.project_inside(pts)
    assert moved[0] and not moved[1]
    assert abs(np.hypot(*proj[0]) - 1.0) <= 1e-12


def test_exterior_values_are_nan(disk65):
    f = disk65.field(lambda x, y: x + y)
    assert np.all(np.isnan(f.values[~disk65.valued_mask]))
    assert np.all(np.isfinite(f.valued()))


def test_field_immutable(rect64):
    f = rect64.field(1.0)
    with pytest.raises(ValueError):
        f.values[0, 0] = 2.0
