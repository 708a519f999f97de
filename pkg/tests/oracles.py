"""Independent oracles used by the tests.

These deliberately avoid the package's own evaluation routes: Bessel K by
the integral representation with a dense trapezoid (exponentially accurate
for these integrands), Bessel I by ascending series, and Richardson
extrapolation for refined-grid reference values.
"""

import numpy as np


def i0_series(x, terms=40):
    x = np.asarray(x, dtype=float)
    q = 0.25 * x * x
    t = np.ones_like(x)
    s = np.ones_like(x)
    for k in range(1, terms + 1):
        t = t * q / (k * k)
        s = s + t
    return s if s.ndim else float(s)


def i1_series(x, terms=40):
    x = np.asarray(x, dtype=float)
    q = 0.25 * x * x
    t = np.ones_like(x)
    s = np.ones_like(x)
    for k in range(1, terms + 1):
        t = t * q / (k * (k + 1))
        s = s + t
    out = 0.5 * x * s
    return out if out.ndim else float(out)


def _cosh_quad(x, weight):
    T = float(np.arccosh(max(745.0 / x, 2.0)))
    n = max(int(T * 256), 256)
    ts = np.linspace(0.0, T, n + 1)
    f = weight(ts) * np.exp(-x * np.cosh(ts))
    return float(np.trapezoid(f, ts))


def k0_quad(x):
    """K0 by the integral representation int_0^inf exp(-x cosh t) dt."""
    return _cosh_quad(float(x), lambda t: 1.0)


def k1_quad(x):
    """K1 by int_0^inf cosh(t) exp(-x cosh t) dt."""
    return _cosh_quad(float(x), np.cosh)


def richardson(coarse, fine, order=2):
    """Eliminate the leading O(h^order) term from values at h and h/2."""
    w = 2.0 ** order
    return (w * fine - coarse) / (w - 1.0)


def observed_orders(errors):
    errors = [float(e) for e in errors]
    return [np.log2(errors[i] / errors[i + 1])
            for i in range(len(errors) - 1)]
