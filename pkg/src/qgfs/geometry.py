"""Computational domains, grid fields, quadrature and interpolation.

The domain is a uniform Cartesian grid covering either a rectangle
[0,Lx]x[0,Ly] or a disk.  Nodes are classified as interior, boundary or
exterior; fields carry one value per interior/boundary node and NaN at
exterior nodes so that accidental exterior reads poison the result instead
of silently passing.

For the disk the grid is the bounding box of the circle.  Interior nodes are
strictly inside; outside nodes touching the inside (8-neighborhood) are the
flagged boundary ring that carries injected Dirichlet values for
interpolation.  The elliptic solve does not difference across the ring at
grid positions: stencil arms that cross the circle are cut at the actual
crossing (fraction theta of a spacing) and the boundary value is applied
there, which keeps the operator symmetric positive definite while making
solution values and gradients converge up to the rim.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

from .errors import GeometryError

EXTERIOR, INTERIOR, BOUNDARY = 0, 1, 2

# per-axis one-sided/centered stencil modes, precomputed per domain
_D_NONE, _D_CENTERED, _D_FWD1, _D_FWD2, _D_BWD1, _D_BWD2 = 0, 1, 2, 3, 4, 5

_CUT_SUBSAMPLES = 32  # sub-grid used to estimate circle coverage of cut cells


class Domain:
    """Discretized rectangle or disk with node classification and quadrature.

    Construct via :func:`build_domain`.  Instances are immutable after
    construction (arrays are write-protected) and safe to share across
    workers; the per-domain caches used by the elliptic solver are populated
    under a lock.
    """

    def __init__(self, shape, xs, ys, status, weights, area, params,
                 cut_theta=None):
        self.shape = shape                      # "rectangle" | "disk"
        self.xs = _freeze(xs)
        self.ys = _freeze(ys)
        self.nx = xs.size
        self.ny = ys.size
        self.hx = float(xs[1] - xs[0])
        self.hy = float(ys[1] - ys[0])
        self.status = _freeze(status)           # (ny, nx) int8
        self.weights = _freeze(weights)         # (ny, nx), 0 at exterior
        self.area = float(area)                 # analytic |M|
        self.params = dict(params)              # shape parameters
        # fraction of a spacing at which each stencil arm (x+,x-,y+,y-) of an
        # interior node meets the boundary; 1.0 where the neighbor is a node
        if cut_theta is None:
            cut_theta = {k: np.ones((self.ny, self.nx))
                         for k in ("xp", "xm", "yp", "ym")}
        self.cut_theta = {k: _freeze(v) for k, v in cut_theta.items()}

        self.interior_mask = _freeze(status == INTERIOR)
        self.boundary_mask = _freeze(status == BOUNDARY)
        self.valued_mask = _freeze(status != EXTERIOR)

        X, Y = np.meshgrid(xs, ys)
        self.X = _freeze(X)
        self.Y = _freeze(Y)

        # caches populated lazily by the elliptic module (matrix, psi2) and
        # by the operators module (stencil modes); guarded by a single lock.
        self._cache: dict = {}
        self._cache_lock = threading.Lock()

    # -- basic queries ----------------------------------------------------

    @property
    def n_interior(self) -> int:
        return int(self.interior_mask.sum())

    def same_grid(self, other: "Domain") -> bool:
        """Structural equality: same shape, resolution and geometry (fields
        from two such domains are nodewise comparable)."""
        return (self is other
                or (self.shape == other.shape
                    and self.nx == other.nx and self.ny == other.ny
                    and self.params == other.params))

    def node_points(self, which="valued"):
        """Coordinates of nodes as an (n, 2) array, row-major node order."""
        mask = {"valued": self.valued_mask,
                "interior": self.interior_mask,
                "boundary": self.boundary_mask}[which]
        return np.column_stack([self.X[mask], self.Y[mask]])

    def contains(self, points):
        """Whether each point lies in the closure of the domain."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        if self.shape == "rectangle":
            lx, ly = self.params["lx"], self.params["ly"]
            return ((p[:, 0] >= 0) & (p[:, 0] <= lx)
                    & (p[:, 1] >= 0) & (p[:, 1] <= ly))
        cx, cy, r = (self.params["cx"], self.params["cy"],
                     self.params["radius"])
        return (p[:, 0] - cx) ** 2 + (p[:, 1] - cy) ** 2 <= r * r

    def clip_to_boundary(self, points, max_cells=1.0):
        """Non-raising projection onto the domain closure.

        Returns (clipped points, moved mask, indices that overshot by more
        than ``max_cells`` grid cells).  Trajectory integration uses the
        indices to name escaped seeds.
        """
        p = np.array(points, dtype=float)
        tol = max_cells * max(self.hx, self.hy) * (1.0 + 1e-12)
        if self.shape == "rectangle":
            lx, ly = self.params["lx"], self.params["ly"]
            lo = np.minimum(p, [lx, ly])
            clipped = np.maximum(lo, 0.0)
            overshoot = np.max(np.abs(p - clipped), axis=1)
            moved = overshoot > 0
        else:
            cx, cy, r = (self.params["cx"], self.params["cy"],
                         self.params["radius"])
            d = p - [cx, cy]
            rad = np.hypot(d[:, 0], d[:, 1])
            overshoot = rad - r
            moved = overshoot > 0
            scale = np.where(moved & (rad > 0), r / np.maximum(rad, 1e-300), 1.0)
            clipped = np.column_stack([cx + d[:, 0] * scale,
                                       cy + d[:, 1] * scale])
        escaped = np.nonzero(overshoot > tol)[0]
        return clipped, moved, escaped

    def project_inside(self, points, max_cells=1.0):
        """Project marginally-outside points onto the boundary; raise if any
        point is more than ``max_cells`` outside."""
        clipped, moved, escaped = self.clip_to_boundary(points, max_cells)
        if escaped.size:
            raise GeometryError(
                f"{escaped.size} point(s) left the domain by more than one "
                f"cell (first index {int(escaped[0])})")
        return clipped, moved

    def validate(self):
        """Check the classification invariants; raises on violation."""
        if self.nx < 8 or self.ny < 8:
            raise GeometryError("grid resolution below 8 per axis")
        if self.n_interior == 0:
            raise GeometryError("no interior nodes")
        st = self.status
        inner = st[1:-1, 1:-1]
        for nb in (st[:-2, 1:-1], st[2:, 1:-1], st[1:-1, :-2], st[1:-1, 2:]):
            if np.any((inner == INTERIOR) & (nb == EXTERIOR)):
                raise GeometryError(
                    "interior node with an exterior 4-neighbor")
        if np.any(st[0, :] == INTERIOR) or np.any(st[-1, :] == INTERIOR) \
                or np.any(st[:, 0] == INTERIOR) or np.any(st[:, -1] == INTERIOR):
            raise GeometryError("interior node on the grid edge")

    # -- field constructors ----------------------------------------------

    def field(self, values=0.0, t=None) -> "ScalarField":
        """Scalar field from a constant, an (ny, nx) array or a callable f(x, y)."""
        if callable(values):
            data = np.asarray(values(self.X, self.Y), dtype=float)
            data = np.broadcast_to(data, (self.ny, self.nx)).copy()
        else:
            data = np.broadcast_to(np.asarray(values, dtype=float),
                                   (self.ny, self.nx)).copy()
        data[~self.valued_mask] = np.nan
        return ScalarField(self, data, t)

    def coordinate_fields(self):
        """The coordinate fields (x, y) as ScalarFields (beta term uses y)."""
        return self.field(self.X.copy()), self.field(self.Y.copy())

    def vector_field(self, u=0.0, v=0.0) -> "VectorField":
        return VectorField(self, self.field(u).values, self.field(v).values)

    def __repr__(self):
        return (f"Domain({self.shape}, nx={self.nx}, ny={self.ny}, "
                f"h=({self.hx:.4g},{self.hy:.4g}))")


def _freeze(arr):
    a = np.ascontiguousarray(arr)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ScalarField:
    """Nodal scalar values on a Domain; NaN at exterior nodes, immutable."""

    domain: Domain
    values: np.ndarray
    t: float | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.domain.ny, self.domain.nx):
            raise GeometryError(f"field shape {v.shape} does not match grid")
        object.__setattr__(self, "values", _freeze(v))

    def with_values(self, values, t=None):
        return ScalarField(self.domain, values, self.t if t is None else t)

    def valued(self):
        """Values at interior+boundary nodes, fixed row-major node order."""
        return self.values[self.domain.valued_mask]

    def interior(self):
        return self.values[self.domain.interior_mask]

    def boundary(self):
        return self.values[self.domain.boundary_mask]

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.valued())))

    def at(self, points, order="bilinear"):
        return interpolate(self, points, order)

    def __add__(self, other):
        return self.with_values(self.values + _vals(other, self.domain))

    def __sub__(self, other):
        return self.with_values(self.values - _vals(other, self.domain))

    def __mul__(self, scalar):
        return self.with_values(self.values * float(scalar))

    __rmul__ = __mul__

    def __neg__(self):
        return self.with_values(-self.values)


def _vals(other, domain):
    if isinstance(other, ScalarField):
        if other.domain is not domain:
            raise GeometryError("field arithmetic across different domains")
        return other.values
    return float(other)


@dataclass(frozen=True)
class VectorField:
    """Two nodal components (u1, u2) on a Domain; immutable like ScalarField."""

    domain: Domain
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        for name in ("u", "v"):
            a = np.asarray(getattr(self, name), dtype=float)
            if a.shape != (self.domain.ny, self.domain.nx):
                raise GeometryError("vector component shape mismatch")
            object.__setattr__(self, name, _freeze(a))

    def components(self):
        return (ScalarField(self.domain, self.u),
                ScalarField(self.domain, self.v))

    def max_norm(self) -> float:
        m = self.domain.valued_mask
        return float(np.max(np.hypot(self.u[m], self.v[m])))

    def at(self, points):
        """Bilinear sample of both components at the given points, (n, 2)."""
        pu = interpolate(ScalarField(self.domain, self.u), points)
        pv = interpolate(ScalarField(self.domain, self.v), points)
        return np.column_stack([pu, pv])


# ----------------------------------------------------------------------
# construction


def build_domain(shape, *, nx, ny, lx=None, ly=None, radius=None,
                 center=(0.0, 0.0)) -> Domain:
    """Build a discretized rectangle [0,lx]x[0,ly] or disk.

    Parameters
    ----------
    shape : "rectangle" or "disk"
    nx, ny : nodes per axis (>= 8)
    lx, ly : rectangle extents (> 0)
    radius, center : disk geometry (radius > 0)
    """
    nx, ny = int(nx), int(ny)
    if nx < 8 or ny < 8:
        raise GeometryError(f"resolution too coarse: nx={nx}, ny={ny} (min 8)")
    if shape == "rectangle":
        if lx is None or ly is None or lx <= 0 or ly <= 0:
            raise GeometryError(f"rectangle extents must be positive, got "
                                f"lx={lx}, ly={ly}")
        dom = _build_rectangle(float(lx), float(ly), nx, ny)
    elif shape == "disk":
        if radius is None or radius <= 0:
            raise GeometryError(f"disk radius must be positive, got {radius}")
        dom = _build_disk(float(radius), float(center[0]), float(center[1]),
                          nx, ny)
    else:
        raise GeometryError(f"unknown domain shape {shape!r}")
    dom.validate()
    return dom


def _build_rectangle(lx, ly, nx, ny):
    xs = np.linspace(0.0, lx, nx)
    ys = np.linspace(0.0, ly, ny)
    status = np.full((ny, nx), INTERIOR, dtype=np.int8)
    status[0, :] = status[-1, :] = BOUNDARY
    status[:, 0] = status[:, -1] = BOUNDARY
    # trapezoid weights: exact for polynomials of degree <= 1
    hx, hy = lx / (nx - 1), ly / (ny - 1)
    wx = np.full(nx, hx)
    wx[0] = wx[-1] = hx / 2
    wy = np.full(ny, hy)
    wy[0] = wy[-1] = hy / 2
    weights = np.outer(wy, wx)
    return Domain("rectangle", xs, ys, status, weights, lx * ly,
                  {"lx": lx, "ly": ly})


_THETA_MIN = 0.01  # cut-fraction floor; bounds the diagonal growth


def _build_disk(radius, cx, cy, nx, ny):
    xs = np.linspace(cx - radius, cx + radius, nx)
    ys = np.linspace(cy - radius, cy + radius, ny)
    hx, hy = xs[1] - xs[0], ys[1] - ys[0]
    X, Y = np.meshgrid(xs, ys)
    r2 = (X - cx) ** 2 + (Y - cy) ** 2
    inside = r2 < radius * radius

    status = np.full((ny, nx), EXTERIOR, dtype=np.int8)
    status[inside] = INTERIOR
    # flagged boundary ring: outside nodes touching the inside (8-neighbors),
    # so every interpolation cell with an interior corner is fully valued
    pad = np.zeros((ny + 2, nx + 2), dtype=bool)
    pad[1:-1, 1:-1] = inside
    touches = np.zeros((ny, nx), dtype=bool)
    for dj in (-1, 0, 1):
        for di in (-1, 0, 1):
            if dj or di:
                touches |= pad[1 + dj:ny + 1 + dj, 1 + di:nx + 1 + di]
    status[~inside & touches] = BOUNDARY

    # cut fractions: where an inside node's axis neighbor is outside, the arm
    # meets the circle at distance theta*h from the node
    dx0, dy0 = X - cx, Y - cy
    span_x = np.sqrt(np.maximum(radius ** 2 - dy0 ** 2, 0.0))
    span_y = np.sqrt(np.maximum(radius ** 2 - dx0 ** 2, 0.0))
    out = ~inside
    pado = np.ones((ny + 2, nx + 2), dtype=bool)
    pado[1:-1, 1:-1] = out

    def theta(arm_out, crossing, h):
        th = np.ones((ny, nx))
        cut = inside & arm_out
        th[cut] = np.clip(crossing[cut] / h, _THETA_MIN, 1.0)
        return th

    cut_theta = {
        "xp": theta(pado[1:-1, 2:], span_x - dx0, hx),
        "xm": theta(pado[1:-1, :-2], span_x + dx0, hx),
        "yp": theta(pado[2:, 1:-1], span_y - dy0, hy),
        "ym": theta(pado[:-2, 1:-1], span_y + dy0, hy),
    }

    weights = _disk_weights(xs, ys, cx, cy, radius, status)
    return Domain("disk", xs, ys, status, weights, np.pi * radius ** 2,
                  {"radius": radius, "cx": cx, "cy": cy}, cut_theta)


def _disk_weights(xs, ys, cx, cy, radius, status):
    """Cell-coverage quadrature weights for the disk.

    Each node owns the cell node +- h/2; cut cells are subsampled on a fixed
    32x32 grid so the weights are deterministic.  Coverage owned by exterior
    nodes is folded into the nearest valued node so the total tracks |M| to
    better than the 2h invariant.
    """
    nx, ny = xs.size, ys.size
    hx, hy = xs[1] - xs[0], ys[1] - ys[0]
    X, Y = np.meshgrid(xs, ys)
    dx = np.maximum(np.abs(X - cx) - hx / 2, 0.0)
    dy = np.maximum(np.abs(Y - cy) - hy / 2, 0.0)
    near2 = dx ** 2 + dy ** 2                       # nearest cell point
    fx = np.abs(X - cx) + hx / 2
    fy = np.abs(Y - cy) + hy / 2
    far2 = fx ** 2 + fy ** 2                        # farthest cell corner
    r2 = radius * radius

    coverage = np.zeros((ny, nx))
    coverage[far2 <= r2] = 1.0
    cut = (near2 < r2) & (far2 > r2)

    m = _CUT_SUBSAMPLES
    offs = (np.arange(m) + 0.5) / m - 0.5
    ox, oy = np.meshgrid(offs * hx, offs * hy)
    ox, oy = ox.ravel(), oy.ravel()
    cyi, cxi = np.nonzero(cut)
    px = X[cyi, cxi][:, None] + ox[None, :]
    py = Y[cyi, cxi][:, None] + oy[None, :]
    frac = np.mean((px - cx) ** 2 + (py - cy) ** 2 < r2, axis=1)
    coverage[cyi, cxi] = frac

    weights = coverage * (hx * hy)

    # hand exterior-owned slivers to the nearest valued node
    valued = status != EXTERIOR
    sj, si = np.nonzero((~valued) & (weights > 0))
    out = weights.copy()
    out[~valued] = 0.0
    for j, i in zip(sj, si):
        best, bd = None, np.inf
        for dj in range(-2, 3):
            for di in range(-2, 3):
                jj, ii = j + dj, i + di
                if 0 <= jj < ny and 0 <= ii < nx and valued[jj, ii]:
                    d = dj * dj + di * di
                    if d < bd:
                        bd, best = d, (jj, ii)
        if best is None:
            raise GeometryError("cut cell with no valued node within 2 cells; "
                                "grid too coarse for this disk")
        out[best] += weights[j, i]
    return out


# ----------------------------------------------------------------------
# quadrature and interpolation


def integrate(fld: ScalarField) -> float:
    """Quadrature Sum(w_i f_i) over interior+boundary nodes.

    The reduction is a fixed-order numpy pairwise sum over the row-major
    node order, so repeated calls are bit-identical and independent of any
    BLAS threading.
    """
    dom = fld.domain
    m = dom.valued_mask
    return float(np.sum(fld.values[m] * dom.weights[m]))


def mean(fld: ScalarField) -> float:
    return integrate(fld) / fld.domain.area


def remove_mean(fld: ScalarField) -> ScalarField:
    """Shift a field so its discrete quadrature mean is zero."""
    return fld - mean(fld)


def interpolate(fld: ScalarField, points, order="bilinear"):
    """Sample a field at arbitrary points inside (or marginally outside) M.

    ``order`` is "bilinear" (default; output stays within the stencil's
    min/max, which is what preserves PV extrema downstream) or "bicubic"
    (Catmull-Rom, third order on smooth data; may overshoot).  Points up to
    one cell outside are projected to the nearest boundary point; anything
    further raises.
    """
    pts = np.asarray(points, dtype=float)
    scalar_in = pts.ndim == 1
    pts = np.atleast_2d(pts)
    dom = fld.domain
    pts, _ = dom.project_inside(pts)
    if order == "bilinear":
        out = _bilinear(fld, pts)
    elif order == "bicubic":
        out = _bicubic(fld, pts)
    else:
        raise ValueError(f"unknown interpolation order {order!r}")
    return float(out[0]) if scalar_in else out


def _cell_index(dom, pts):
    ix = np.clip(((pts[:, 0] - dom.xs[0]) / dom.hx).astype(np.int64),
                 0, dom.nx - 2)
    iy = np.clip(((pts[:, 1] - dom.ys[0]) / dom.hy).astype(np.int64),
                 0, dom.ny - 2)
    fx = np.clip((pts[:, 0] - dom.xs[ix]) / dom.hx, 0.0, 1.0)
    fy = np.clip((pts[:, 1] - dom.ys[iy]) / dom.hy, 0.0, 1.0)
    return ix, iy, fx, fy


def _bilinear(fld, pts):
    dom, V = fld.domain, fld.values
    ix, iy, fx, fy = _cell_index(dom, pts)
    v00 = V[iy, ix]
    v10 = V[iy, ix + 1]
    v01 = V[iy + 1, ix]
    v11 = V[iy + 1, ix + 1]
    # nested lerp: the floating-point result cannot leave [min, max] of the
    # stencil, which keeps transported extrema one-sided with zero slack
    a = v00 + fx * (v10 - v00)
    b = v01 + fx * (v11 - v01)
    out = a + fy * (b - a)
    bad = ~np.isfinite(out)
    if np.any(bad):
        out = out.copy()
        out[bad] = _partial_cell(dom, V, pts[bad], ix[bad], iy[bad],
                                 fx[bad], fy[bad])
    return out


def _partial_cell(dom, V, pts, ix, iy, fx, fy):
    """Fallback for disk cells with exterior corners: renormalized bilinear
    weights over the valued corners; nearest valued node if none."""
    out = np.empty(pts.shape[0])
    for k in range(pts.shape[0]):
        i, j = int(ix[k]), int(iy[k])
        corners = np.array([V[j, i], V[j, i + 1], V[j + 1, i], V[j + 1, i + 1]])
        w = np.array([(1 - fx[k]) * (1 - fy[k]), fx[k] * (1 - fy[k]),
                      (1 - fx[k]) * fy[k], fx[k] * fy[k]])
        ok = np.isfinite(corners)
        if np.any(ok) and w[ok].sum() > 0:
            out[k] = float(np.sum(corners[ok] * w[ok]) / np.sum(w[ok]))
        else:
            out[k] = _nearest_valued(dom, V, pts[k])
    return out


def _nearest_valued(dom, V, p):
    i0 = int(np.clip(round((p[0] - dom.xs[0]) / dom.hx), 0, dom.nx - 1))
    j0 = int(np.clip(round((p[1] - dom.ys[0]) / dom.hy), 0, dom.ny - 1))
    best, bd = None, np.inf
    for rad in range(1, 4):
        for j in range(max(0, j0 - rad), min(dom.ny, j0 + rad + 1)):
            for i in range(max(0, i0 - rad), min(dom.nx, i0 + rad + 1)):
                if dom.valued_mask[j, i]:
                    d = (dom.xs[i] - p[0]) ** 2 + (dom.ys[j] - p[1]) ** 2
                    if d < bd:
                        bd, best = d, V[j, i]
        if best is not None:
            return best
    raise GeometryError(f"no valued node near point {tuple(p)}")


def _keys_weights(f):
    # Catmull-Rom / Keys kernel (a = -1/2), reproduces quadratics
    f2, f3 = f * f, f * f * f
    w0 = 0.5 * (-f3 + 2 * f2 - f)
    w1 = 0.5 * (3 * f3 - 5 * f2 + 2)
    w2 = 0.5 * (-3 * f3 + 4 * f2 + f)
    w3 = 0.5 * (f3 - f2)
    return w0, w1, w2, w3


def _bicubic(fld, pts):
    dom, V = fld.domain, fld.values
    ix, iy, fx, fy = _cell_index(dom, pts)
    wx = _keys_weights(fx)
    wy = _keys_weights(fy)
    cols_x = [np.clip(ix + s, 0, dom.nx - 1) for s in (-1, 0, 1, 2)]
    rows_y = [np.clip(iy + s, 0, dom.ny - 1) for s in (-1, 0, 1, 2)]
    out = np.zeros(pts.shape[0])
    for a, jy in enumerate(rows_y):
        row = np.zeros(pts.shape[0])
        for b, jx in enumerate(cols_x):
            row += wx[b] * V[jy, jx]
        out += wy[a] * row
    bad = ~np.isfinite(out)
    if np.any(bad):
        out = out.copy()
        out[bad] = _bilinear(fld, pts[bad])
    return out
