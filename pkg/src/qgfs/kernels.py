"""Free-space kernel layer and the quasi-Lipschitz modulus.

The fundamental solution of (Laplacian - I) in 2D is -K0(r)/(2*pi) with the
same logarithmic singularity as the Laplacian's.  K0/K1 are evaluated here
without external special-function dependencies: ascending series below r = 2
and a Steed/Temme continued fraction above (a truncated asymptotic series
cannot reach 1e-10 just past the split, so the continued fraction evaluates
that expansion to convergence instead).

chi is the log-Lipschitz modulus that controls velocity increments for
bounded potential vorticity: chi(r) = (1 - ln r) r below 1, else 1.
"""

from __future__ import annotations

import numpy as np

EULER_GAMMA = 0.5772156649015328606

_SERIES_SPLIT = 2.0
_SERIES_TERMS = 40
_CF_MAXIT = 300
_CF_EPS = 1e-16


# ----------------------------------------------------------------------
# quasi-Lipschitz modulus


def chi(r):
    """chi(r) = (1 - ln r) r for r < 1, 1 for r >= 1; chi(0) = 0.

    Continuous, increasing and concave; accepts scalars or arrays.
    Negative arguments raise.
    """
    scalar = np.ndim(r) == 0
    arr = np.atleast_1d(np.asarray(r, dtype=float))
    if np.any(arr < 0):
        raise ValueError("chi is defined for nonnegative separations only")
    out = np.ones_like(arr)
    small = (arr < 1.0) & (arr > 0.0)
    out[small] = (1.0 - np.log(arr[small])) * arr[small]
    out[arr == 0.0] = 0.0
    return float(out[0]) if scalar else out


def chi_majorant(r, eps):
    """Linear majorant -ln(eps) * r + eps >= chi(r), tight at r = eps."""
    if not 0.0 < eps < 1.0:
        raise ValueError(f"eps must lie in (0, 1), got {eps}")
    scalar = np.ndim(r) == 0
    arr = np.atleast_1d(np.asarray(r, dtype=float))
    if np.any(arr < 0):
        raise ValueError("majorant is defined for nonnegative r only")
    out = -np.log(eps) * arr + eps
    return float(out[0]) if scalar else out


# ----------------------------------------------------------------------
# modified Bessel functions (internal)


def _i0_i1_series(x):
    """Ascending series for I0 and I1; adequate for |x| <= ~10."""
    x = np.asarray(x, dtype=float)
    q = 0.25 * x * x
    t0 = np.ones_like(x)
    s0 = np.ones_like(x)
    i0 = t0.copy()
    i1 = s0.copy()
    for k in range(1, _SERIES_TERMS + 1):
        t0 = t0 * q / (k * k)
        s0 = s0 * q / (k * (k + 1))
        i0 += t0
        i1 += s0
    return i0, 0.5 * x * i1


def _k0_k1_series(x):
    """Ascending series for K0 and K1 on 0 < x <= 2."""
    x = np.asarray(x, dtype=float)
    q = 0.25 * x * x
    lg = np.log(0.5 * x)
    i0, i1 = _i0_i1_series(x)

    t = np.ones_like(x)        # q^k / (k!)^2
    hk = 0.0
    s0 = np.zeros_like(x)
    for k in range(1, _SERIES_TERMS + 1):
        t = t * q / (k * k)
        hk += 1.0 / k
        s0 += t * hk
    k0 = -(lg + EULER_GAMMA) * i0 + s0

    u = np.ones_like(x)        # q^k / (k! (k+1)!)
    s1 = np.full_like(x, 1.0 - 2.0 * EULER_GAMMA)   # k = 0 term weight
    hk = 0.0
    for k in range(1, _SERIES_TERMS + 1):
        u = u * q / (k * (k + 1))
        hk += 1.0 / k
        s1 += u * (hk + hk + 1.0 / (k + 1) - 2.0 * EULER_GAMMA)
    k1 = 1.0 / x + lg * i1 - 0.25 * x * s1
    return k0, k1


def _k0_k1_cf(x):
    """Steed continued fraction for K0, K1 on x >= 2 (order mu = 0)."""
    x = np.asarray(x, dtype=float)
    a1 = 0.25
    b = 2.0 * (1.0 + x)
    d = 1.0 / b
    h = d.copy()
    delh = d.copy()
    q1 = np.zeros_like(x)
    q2 = np.ones_like(x)
    q = np.full_like(x, a1)
    c = np.full_like(x, a1)
    a = -a1
    s = 1.0 + q * delh
    active = np.ones(x.shape, dtype=bool)
    for i in range(2, _CF_MAXIT + 1):
        a -= 2.0 * (i - 1)
        c = -a * c / i
        qnew = (q1 - b * q2) / a
        q1, q2 = q2, qnew
        q = q + c * qnew
        b = b + 2.0
        d = 1.0 / (b + a * d)
        delh = (b * d - 1.0) * delh
        h = np.where(active, h + delh, h)
        dels = q * delh
        s = np.where(active, s + dels, s)
        active = active & (np.abs(dels / s) >= _CF_EPS)
        if not active.any():
            break
    h = a1 * h
    k0 = np.sqrt(np.pi / (2.0 * x)) * np.exp(-x) / s
    k1 = k0 * (x + 0.5 - h) / x
    return k0, k1


def _k0_k1(x):
    x = np.asarray(x, dtype=float)
    k0 = np.empty_like(x)
    k1 = np.empty_like(x)
    lo = x < _SERIES_SPLIT
    if lo.any():
        k0[lo], k1[lo] = _k0_k1_series(x[lo])
    if (~lo).any():
        k0[~lo], k1[~lo] = _k0_k1_cf(x[~lo])
    return k0, k1


def bessel_k0(r):
    """K0(r) for r > 0 (scalar or array)."""
    arr, scalar = _positive(r, "bessel_k0")
    out = _k0_k1(arr)[0]
    return float(out[0]) if scalar else out


def bessel_k1(r):
    """K1(r) for r > 0 (scalar or array)."""
    arr, scalar = _positive(r, "bessel_k1")
    out = _k0_k1(arr)[1]
    return float(out[0]) if scalar else out


def _positive(r, name):
    arr = np.atleast_1d(np.asarray(r, dtype=float))
    if np.any(arr <= 0):
        raise ValueError(f"{name} requires r > 0")
    return arr, np.ndim(r) == 0


# ----------------------------------------------------------------------
# free-space Green's function of (Laplacian - I)


def green_free(r):
    """G(r) = -K0(r)/(2 pi): logarithmically singular at 0, decaying at infinity."""
    arr, scalar = _positive(r, "green_free")
    out = -_k0_k1(arr)[0] / (2.0 * np.pi)
    return float(out[0]) if scalar else out


def green_free_radial_derivative(r):
    """dG/dr = K1(r)/(2 pi), the gradient kernel magnitude."""
    arr, scalar = _positive(r, "green_free_radial_derivative")
    out = _k0_k1(arr)[1] / (2.0 * np.pi)
    return float(out[0]) if scalar else out


def kernel_K(x, y):
    """Perp-gradient of the free-space kernel: K(x, y) = grad_x^perp G(|x-y|).

    Tangential to the separation vector, magnitude K1(|x-y|)/(2 pi).
    Accepts single points or (n, 2) arrays; x == y raises (singular).
    """
    xa = np.atleast_2d(np.asarray(x, dtype=float))
    ya = np.atleast_2d(np.asarray(y, dtype=float))
    d = xa - ya
    r = np.hypot(d[:, 0], d[:, 1])
    if np.any(r == 0):
        raise ValueError("kernel_K is singular at x == y")
    gp = green_free_radial_derivative(r)      # dG/dr
    # grad_x G = gp * d / r; perp rotates by +90 degrees: (-g2, g1)
    out = np.column_stack([-gp * d[:, 1] / r, gp * d[:, 0] / r])
    if np.ndim(x) == 1 and np.ndim(y) == 1:
        return out[0]
    return out
