"""Shared finite-difference operators on domain fields.

Centered second-order stencils wherever both axis neighbors carry values,
one-sided (second- then first-order) at staircase/edge nodes.  Every module
that needs a gradient, divergence, curl or the Helmholtz operator goes
through here, so the diagnostics test the same discretization the solver
uses.
"""

from __future__ import annotations

import numpy as np

from .geometry import Domain, ScalarField, VectorField

_PAD = 2


def _padded(values):
    ny, nx = values.shape
    out = np.full((ny + 2 * _PAD, nx + 2 * _PAD), np.nan)
    out[_PAD:-_PAD, _PAD:-_PAD] = values
    return out


def _stencil_modes(dom: Domain):
    """Per-node, per-axis derivative mode arrays, cached on the domain."""
    with dom._cache_lock:
        modes = dom._cache.get("stencil_modes")
        if modes is not None:
            return modes
        ok = _padded(dom.valued_mask.astype(float)) == 1.0
        c = ok[_PAD:-_PAD, _PAD:-_PAD]

        # neighbor availability along x
        xp1 = ok[_PAD:-_PAD, _PAD + 1:ok.shape[1] - _PAD + 1]
        xp2 = ok[_PAD:-_PAD, _PAD + 2:]
        xm1 = ok[_PAD:-_PAD, _PAD - 1:-_PAD - 1]
        xm2 = ok[_PAD:-_PAD, :-2 * _PAD]
        yp1 = ok[_PAD + 1:ok.shape[0] - _PAD + 1, _PAD:-_PAD]
        yp2 = ok[_PAD + 2:, _PAD:-_PAD]
        ym1 = ok[_PAD - 1:-_PAD - 1, _PAD:-_PAD]
        ym2 = ok[:-2 * _PAD, _PAD:-_PAD]

        def pick(p1, p2, m1, m2):
            mode = np.zeros(c.shape, dtype=np.int8)
            mode[c & p1 & m1] = 1                       # centered
            fwd2 = c & p1 & p2 & ~m1 & (mode == 0)
            mode[fwd2] = 3
            bwd2 = c & m1 & m2 & ~p1 & (mode == 0)
            mode[bwd2] = 5
            fwd1 = c & p1 & (mode == 0)
            mode[fwd1] = 2
            bwd1 = c & m1 & (mode == 0)
            mode[bwd1] = 4
            return mode

        modes = (pick(xp1, xp2, xm1, xm2), pick(yp1, yp2, ym1, ym2))
        dom._cache["stencil_modes"] = modes
        return modes


def _derivative(dom, values, axis):
    """First derivative along x (axis=0) or y (axis=1) at valued nodes."""
    h = dom.hx if axis == 0 else dom.hy
    mode = _stencil_modes(dom)[axis]
    P = _padded(values)
    ny, nx = values.shape

    def sh(k):
        if axis == 0:
            return P[_PAD:-_PAD, _PAD + k:_PAD + k + nx]
        return P[_PAD + k:_PAD + k + ny, _PAD:-_PAD]

    f0, fp1, fp2, fm1, fm2 = values, sh(1), sh(2), sh(-1), sh(-2)
    out = np.zeros_like(values)
    np.divide(fp1 - fm1, 2 * h, out=out, where=mode == 1)
    np.divide(-3 * f0 + 4 * fp1 - fp2, 2 * h, out=out, where=mode == 3)
    np.divide(3 * f0 - 4 * fm1 + fm2, 2 * h, out=out, where=mode == 5)
    np.divide(fp1 - f0, h, out=out, where=mode == 2)
    np.divide(f0 - fm1, h, out=out, where=mode == 4)
    out[~dom.valued_mask] = np.nan
    return out


def gradient(fld: ScalarField) -> VectorField:
    dom = fld.domain
    return VectorField(dom, _derivative(dom, fld.values, 0),
                       _derivative(dom, fld.values, 1))


def perp_gradient(fld: ScalarField) -> VectorField:
    """u = (-d psi/dy, d psi/dx), the divergence-free velocity of a stream field."""
    dom = fld.domain
    return VectorField(dom, -_derivative(dom, fld.values, 1),
                       _derivative(dom, fld.values, 0))


def divergence(vec: VectorField) -> ScalarField:
    dom = vec.domain
    d = _derivative(dom, vec.u, 0) + _derivative(dom, vec.v, 1)
    return ScalarField(dom, d)


def curl(vec: VectorField) -> ScalarField:
    """Scalar curl dF2/dx - dF1/dy (the forcing f = curl F)."""
    dom = vec.domain
    c = _derivative(dom, vec.v, 0) - _derivative(dom, vec.u, 1)
    return ScalarField(dom, c)


def _second_derivative(dom, values, axis):
    h = dom.hx if axis == 0 else dom.hy
    P = _padded(values)
    ny, nx = values.shape

    def sh(k):
        if axis == 0:
            return P[_PAD:-_PAD, _PAD + k:_PAD + k + nx]
        return P[_PAD + k:_PAD + k + ny, _PAD:-_PAD]

    f0, fp1, fp2, fm1, fm2 = values, sh(1), sh(2), sh(-1), sh(-2)
    okp1, okp2 = np.isfinite(fp1), np.isfinite(fp2)
    okm1, okm2 = np.isfinite(fm1), np.isfinite(fm2)
    centered = okp1 & okm1
    fwd = okp1 & okp2 & ~centered
    bwd = okm1 & okm2 & ~centered & ~fwd
    out = np.zeros_like(values)
    np.divide(fp1 - 2 * f0 + fm1, h * h, out=out, where=centered)
    np.divide(f0 - 2 * fp1 + fp2, h * h, out=out, where=fwd)
    np.divide(f0 - 2 * fm1 + fm2, h * h, out=out, where=bwd)
    out[~dom.valued_mask] = np.nan
    return out


def apply_helmholtz(fld: ScalarField) -> ScalarField:
    """(Laplacian - I) f with exactly the stencil the elliptic solve inverts.

    At interior nodes each arm contributes (f_nb - f_0)/(theta h^2); theta is
    1 for interior neighbors and the cut fraction for arms that meet the
    boundary, where the neighbor's stored value is the injected boundary
    value.  Applying this to a solve's output reproduces its right-hand side
    to solver tolerance, which is what makes the initial-PV round trip exact.
    Boundary nodes get one-sided second differences (they only feed
    near-boundary interpolation, not the linear system).
    """
    dom = fld.domain
    V = fld.values
    P = _padded(V)
    ny, nx = V.shape
    ax, ay = 1.0 / dom.hx ** 2, 1.0 / dom.hy ** 2
    vxp = P[_PAD:-_PAD, _PAD + 1:_PAD + 1 + nx]
    vxm = P[_PAD:-_PAD, _PAD - 1:_PAD - 1 + nx]
    vyp = P[_PAD + 1:_PAD + 1 + ny, _PAD:-_PAD]
    vym = P[_PAD - 1:_PAD - 1 + ny, _PAD:-_PAD]
    th = dom.cut_theta
    lap = (ax / th["xp"] * (vxp - V) + ax / th["xm"] * (vxm - V)
           + ay / th["yp"] * (vyp - V) + ay / th["ym"] * (vym - V))
    out = np.where(dom.interior_mask, lap - V, np.nan)
    bmask = dom.boundary_mask
    if bmask.any():
        one_sided = (_second_derivative(dom, V, 0)
                     + _second_derivative(dom, V, 1)) - V
        out[bmask] = one_sided[bmask]
    return ScalarField(dom, out)


def boundary_normals(dom: Domain):
    """Outward unit normals at boundary nodes (rectangle edges or radial)."""
    pts = dom.node_points("boundary")
    if dom.shape == "disk":
        c = np.array([dom.params["cx"], dom.params["cy"]])
        d = pts - c
        return d / np.linalg.norm(d, axis=1, keepdims=True)
    lx, ly = dom.params["lx"], dom.params["ly"]
    n = np.zeros_like(pts)
    n[pts[:, 0] == 0.0, 0] = -1.0
    n[pts[:, 0] == lx, 0] = 1.0
    n[pts[:, 1] == 0.0, 1] = -1.0
    n[pts[:, 1] == ly, 1] = 1.0
    norm = np.linalg.norm(n, axis=1, keepdims=True)
    return n / np.maximum(norm, 1e-300)
