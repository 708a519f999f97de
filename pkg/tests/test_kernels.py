import numpy as np
import pytest

from qgfs import chi, chi_majorant, green_free, kernel_K
from qgfs.kernels import (EULER_GAMMA, bessel_k0, bessel_k1,
                          green_free_radial_derivative)

from oracles import k0_quad, k1_quad


def test_chi_values():
    assert chi(1.0) == 1.0
    assert abs(chi(np.exp(-1.0)) - 2.0 / np.e) <= 1e-15
    assert chi(0.0) == 0.0
    assert chi(2.5) == 1.0
    # frozen direct evaluation and its majorant instance
    assert abs(chi(0.05) - 0.19978661367769954) <= 1e-15
    assert chi(0.05) <= chi_majorant(0.05, 0.1) <= 0.21513 + 1e-5


def test_chi_rejects_negative():
    with pytest.raises(ValueError):
        chi(-0.1)
    with pytest.raises(ValueError):
        chi(np.array([0.5, -1.0]))


def test_chi_majorant_eps_domain():
    for eps in (0.0, 1.0, -0.5, 2.0):
        with pytest.raises(ValueError):
            chi_majorant(0.5, eps)


def test_chi_majorant_property_10k_samples():
    rng = np.random.default_rng(42)
    r = 10.0 ** rng.uniform(-8, 1, 10000)
    eps = rng.uniform(1e-12, 1.0 - 1e-12, 10000)
    maj = -np.log(eps) * r + eps
    violations = int(np.sum(chi(r) > maj * (1 + 1e-14)))
    assert violations == 0


def test_chi_majorant_tangency():
    for eps in (0.01, 0.1, 0.5, 0.9):
        assert abs(chi_majorant(eps, eps) - chi(eps)) <= 1e-15


def test_chi_monotone_concave():
    r = np.logspace(-8, 0, 400)
    v = chi(r)
    assert np.all(np.diff(v) > 0)
    # chords lie below the function (concavity) including across r = 1
    r = np.linspace(1e-6, 2.0, 500)
    v = chi(r)
    mid = chi(0.5 * (r[:-1] + r[1:]))
    assert np.all(0.5 * (v[:-1] + v[1:]) <= mid * (1 + 1e-12))


def test_chi_jensen_mean_inequality():
    rng = np.random.default_rng(3)
    for _ in range(200):
        d = 10.0 ** rng.uniform(-6, 0.5, rng.integers(2, 40))
        assert np.mean(chi(d)) <= chi(float(np.mean(d))) * (1 + 1e-12)


def test_chi_continuity_at_one():
    assert abs(chi(1.0 - 1e-12) - 1.0) <= 1e-11
    assert chi(1.0 + 1e-12) == 1.0


def test_k0_k1_against_quadrature_oracle():
    rs = np.concatenate([np.logspace(-8, 0.29, 40),
                         np.linspace(1.8, 2.2, 11),
                         np.logspace(np.log10(2.3), np.log10(30.0), 40)])
    for r in rs:
        ref0, ref1 = k0_quad(r), k1_quad(r)
        assert abs(bessel_k0(r) - ref0) <= 1e-10 * ref0
        assert abs(bessel_k1(r) - ref1) <= 1e-10 * ref1


def test_green_free_at_one():
    ref = -k0_quad(1.0) / (2 * np.pi)
    assert abs(green_free(1.0) - ref) <= 1e-10 * abs(ref)


def test_green_free_log_singularity():
    # G(r) - ln(r)/(2 pi) -> (gamma - ln 2)/(2 pi); bounded combination
    limit = (EULER_GAMMA - np.log(2.0)) / (2 * np.pi)
    for r in (1e-6, 1e-7, 1e-8):
        val = green_free(r) - np.log(r) / (2 * np.pi)
        assert abs(val - limit) <= 1e-10
    assert abs(limit) - 0.0184511 <= 1e-6


def test_green_free_decay():
    v = green_free(20.0)
    assert -1e-9 <= v < 0.0


def test_green_free_rejects_nonpositive():
    for r in (0.0, -1.0):
        with pytest.raises(ValueError):
            green_free(r)


def test_green_free_radial_ode():
    # G'' + G'/r - G = 0 away from the origin
    for r in np.logspace(np.log10(0.1), 1.0, 25):
        h = max(min(5e-4 * r, 2e-3), 1e-5)
        g0 = green_free(r)
        gp = (green_free(r + h) - green_free(r - h)) / (2 * h)
        gpp = (green_free(r + h) - 2 * g0 + green_free(r - h)) / h ** 2
        res = gpp + gp / r - g0
        assert abs(res) <= 1e-6 * max(abs(g0), abs(gp), abs(gpp))


def test_singularity_bounds_calibrated():
    rs = np.logspace(-8, np.log10(30.0), 200)
    g = np.abs(green_free(rs))
    gp = np.abs(green_free_radial_derivative(rs))
    c_val = np.max(g / (1.0 + np.abs(np.log(rs))))
    c_grad = np.max(gp / (1.0 + 1.0 / rs))
    # frozen from the implementation; both stay O(1/(2 pi))
    assert c_val <= 0.17
    assert c_grad <= 0.17


def test_kernel_K_orthogonal_to_separation():
    rng = np.random.default_rng(5)
    x = rng.uniform(-2, 2, (2000, 2))
    y = rng.uniform(-2, 2, (2000, 2))
    keep = np.hypot(*(x - y).T) > 1e-9
    x, y = x[keep], y[keep]
    K = kernel_K(x, y)
    dots = np.abs(np.sum(K * (x - y), axis=1))
    scale = np.hypot(K[:, 0], K[:, 1]) * np.hypot(*(x - y).T)
    assert np.all(dots <= 1e-12 * np.maximum(scale, 1e-300))


def test_kernel_K_magnitude_at_unit_separation():
    K = kernel_K(np.array([1.0, 0.0]), np.array([0.0, 0.0]))
    ref = k1_quad(1.0) / (2 * np.pi)
    assert abs(np.hypot(*K) - ref) <= 1e-10 * ref
    assert abs(ref - 0.095797) <= 1e-5


def test_kernel_K_symmetry_and_singularity():
    rng = np.random.default_rng(6)
    x = rng.uniform(-1, 1, (100, 2))
    y = rng.uniform(-1, 1, (100, 2))
    Kxy = kernel_K(x, y)
    Kyx = kernel_K(y, x)
    assert np.allclose(np.hypot(*Kxy.T), np.hypot(*Kyx.T), rtol=0, atol=0)
    with pytest.raises(ValueError):
        kernel_K(np.array([0.5, 0.5]), np.array([0.5, 0.5]))
