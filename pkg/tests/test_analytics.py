import dataclasses
import math

import numpy as np
import pytest
from scipy.integrate import trapezoid

from excursion_area import (LatticePMF, NoRoot, SingularCovariance, TruncationTooCoarse, adaptive_simpson,
                            assemble_constants, bridge_density, chebyshev_bound, conditional_tau,
                            covariance_matrix, cramer_profile, cramer_root, euler_gap, mgf, psi,
                            reversed_kernel, saddle, sigma2, tilt)
from excursion_area import analytics
from excursion_area.analytics import chebyshev_series_values, _cheb_series

from conftest import random_pmf

LAM = math.log(2.5)
# regression baselines, computed once by adaptive quadrature at tolerance 1e-10
I_BASELINE = 0.05070237546168738
THETA_BASELINE = 0.41264581311555
V_COND_BASELINE = 0.0530347491098
DELTA2_BASELINE = 15.48448634791
KAPPA_BASELINE = 0.03844059014


def riemann_cov(pmf, lam, t, reverse=False, steps=10**6):
    """Midpoint-rule oracle for the covariance entries."""
    h = t / steps
    if reverse:
        u = 1 - t + (np.arange(steps) + 0.5) * h
        w = t - 1 + u
    else:
        u = (np.arange(steps) + 0.5) * h
        w = t - u
    s = analytics._sigma2(pmf, lam, u)
    return np.array([h * s.sum(), h * (s * w).sum(), h * (s * w * w).sum()])


def test_cramer_root_closed_form(pmf):
    assert cramer_root(pmf) == pytest.approx(LAM, abs=1e-12)


def test_cramer_root_three_point_law():
    p = LatticePMF.from_pairs([(-2, 0.5), (0, 0.25), (1, 0.25)])
    lam = cramer_root(p)
    assert lam > 0
    assert abs(0.25 * math.exp(lam) + 0.25 + 0.5 * math.exp(-2 * lam) - 1) <= 1e-12


def test_cramer_root_random_laws():
    rng = np.random.default_rng(2024)
    for _ in range(20):
        p = random_pmf(rng)
        lam = cramer_root(p)
        assert lam > 0 and abs(mgf(p, lam) - 1) <= 1e-12


def test_no_root():
    with pytest.raises(NoRoot):
        cramer_root(LatticePMF.from_pairs([(-1, 1.0)]))
    with pytest.raises(NoRoot):
        cramer_root(LatticePMF.from_pairs([(-1, 0.3), (1, 0.7)]))


def test_psi_values(profile):
    assert psi(profile, 0.0) == 0.0 and psi(profile, 1.0) == 0.0
    half = -math.log(0.2 * math.sqrt(2.5) + 0.3 + 0.5 / math.sqrt(2.5)) / LAM
    assert psi(profile, 0.5) == pytest.approx(half, abs=1e-15)
    assert psi(profile, 0.5) == pytest.approx(0.076323, abs=1e-5)
    assert np.all(profile.psi_grid >= 0)


def test_mirror_symmetric_family(profile):
    # p_k e^{lam k} = p_{-k} for the example law, so psi and sigma2 are symmetric about 1/2
    u = np.linspace(0, 1, 101)
    assert np.allclose(psi(profile, u), psi(profile, 1 - u), atol=1e-15)
    assert np.allclose(sigma2(profile, u), sigma2(profile, 1 - u), atol=1e-14)


def test_area_rate(profile):
    assert profile.I == pytest.approx(I_BASELINE, abs=1e-12)
    assert profile.theta == pytest.approx(THETA_BASELINE, abs=1e-12)
    assert profile.theta ** 2 / (4 * profile.lam ** 2) == pytest.approx(profile.I, abs=1e-12)
    assert profile.I_error <= 1e-10


def test_linear_interpolant_error_bound(profile):
    fine = np.linspace(0, 1, 20001)
    vals = psi(profile, fine)
    curv = np.max(np.abs(np.diff(vals, 2))) / (fine[1] - fine[0]) ** 2
    errors = []
    for m in (16, 32, 64):
        grid = np.linspace(0, 1, m + 1)
        h = 1 / m
        interp = trapezoid(psi(profile, grid), grid)
        err = abs(interp - profile.I)
        assert err <= h * h * curv / 8
        errors.append(err)
    assert errors[1] / errors[0] == pytest.approx(0.25, abs=0.02)
    assert errors[2] / errors[1] == pytest.approx(0.25, abs=0.02)


def test_random_profiles_consistent():
    rng = np.random.default_rng(7)
    for _ in range(5):
        p = random_pmf(rng)
        prof = cramer_profile(p)
        assert abs(mgf(p, prof.lam) - 1) <= 1e-10
        assert prof.theta == pytest.approx(2 * prof.lam * math.sqrt(prof.I), abs=1e-12)
        assert np.all(prof.sigma2_grid > 0)
        assert prof.delta2 > 0 and prof.V_cond > 0


def test_sigma2_examples(profile, pmf):
    assert sigma2(profile, 1.0) == pytest.approx(0.61, abs=1e-14)
    assert sigma2(profile, 0.0) == pytest.approx(0.61, abs=1e-14)
    for u in np.linspace(0, 1, 11):
        assert sigma2(profile, u) == pytest.approx(tilt(pmf, LAM * (1 - u)).variance, abs=1e-12)


def test_covariance_small_t(profile):
    kern = profile.kernel
    cov = covariance_matrix(kern, 1e-6)
    assert np.all(np.abs(cov) < 1e-5)
    s11 = [covariance_matrix(kern, t)[0, 0] for t in np.linspace(0.05, 1, 20)]
    assert np.all(np.diff(s11) > 0)


def test_covariance_positive_definite(profile):
    for t in np.linspace(0.01, 1, 25):
        cov = covariance_matrix(profile.kernel, t)
        assert np.allclose(cov, cov.T)
        assert np.linalg.det(cov) > 0


def test_constant_sigma2_kernel(monkeypatch, pmf):
    s = 0.37
    monkeypatch.setattr(analytics, "_sigma2", lambda pmf, lam, u: s + 0 * np.asarray(u, dtype=float))
    for t in (0.25, 0.5, 1.0):
        fwd = analytics._cov_entries(pmf, LAM, t, 1e-12, reverse=False)
        rev = analytics._cov_entries(pmf, LAM, t, 1e-12, reverse=True)
        expect = (s * t, s * t * t / 2, s * t ** 3 / 3)
        assert fwd == pytest.approx(expect, abs=1e-13)
        assert rev == pytest.approx(expect, abs=1e-13)
    s11, s12, s22 = analytics._cov_entries(pmf, LAM, 1.0, 1e-12, reverse=False)
    assert s22 - s12 ** 2 / s11 == pytest.approx(s / 12, abs=1e-13)


def test_covariance_riemann_oracle(profile, pmf):
    cov = covariance_matrix(profile.kernel, 1.0)
    oracle = riemann_cov(pmf, LAM, 1.0)
    assert np.max(np.abs(oracle - [cov[0, 0], cov[0, 1], cov[1, 1]])) <= 1e-6
    rev = reversed_kernel(profile.kernel, 0.5)
    oracle = riemann_cov(pmf, LAM, 0.5, reverse=True)
    assert np.max(np.abs(oracle - [rev[0, 0], rev[0, 1], rev[1, 1]])) <= 1e-6
    assert reversed_kernel(profile.kernel, 1.0)[0, 0] == pytest.approx(cov[0, 0], abs=1e-13)


def test_density_peak_and_normalization(profile):
    kern = profile.kernel
    for t in (0.3, 1.0):
        cov = covariance_matrix(kern, t)
        det = np.linalg.det(cov)
        assert bridge_density(kern, t, 0.0, 0.0) == pytest.approx(1 / (2 * math.pi * math.sqrt(det)), rel=1e-12)
        sx, sy = 8 * math.sqrt(cov[0, 0]), 8 * math.sqrt(cov[1, 1])
        xs = np.linspace(-sx, sx, 1201)
        ys = np.linspace(-sy, sy, 1201)
        vals = bridge_density(kern, t, xs[:, None], ys[None, :])
        total = trapezoid(trapezoid(vals, ys, axis=1), xs)
        assert total == pytest.approx(1.0, abs=1e-6)


def test_endpoint_profile_matches_conditional_variance(profile):
    kern = profile.kernel
    cov = covariance_matrix(kern, 1.0)
    v_cond = cov[1, 1] - cov[0, 1] ** 2 / cov[0, 0]
    assert profile.V_cond == pytest.approx(v_cond, rel=1e-12)
    assert profile.V_cond == pytest.approx(V_COND_BASELINE, rel=1e-9)
    z = np.linspace(-1, 1, 41)
    ratio = kern.endpoint_density(z) / kern.endpoint_density(0.0)
    assert np.allclose(ratio, np.exp(-z * z / (2 * v_cond)), rtol=1e-12)


def test_singular_covariance(pmf):
    prof = cramer_profile(pmf)
    kern = prof.kernel
    kern._cache[(0.5, False)] = np.array([[1.0, 1.0], [1.0, 1.0]])
    with pytest.raises(SingularCovariance):
        kern.density(0.5, 0.0, 0.0)


def test_euler_gap(profile):
    assert euler_gap(profile, 1) == pytest.approx(profile.lam * profile.I, abs=1e-15)
    ns = 2 ** np.arange(6, 13)
    scaled = np.array([n * abs(euler_gap(profile, int(n))) for n in ns])
    assert scaled.max() / scaled.min() <= 2
    assert scaled[-1] == pytest.approx(0.045814, rel=1e-3)
    ext = euler_gap(profile, 4096, precision="extended")
    assert abs(ext - euler_gap(profile, 4096)) <= 1e-9


def test_saddle(profile):
    unit = dataclasses.replace(profile, I=1.0)
    assert tuple(saddle(unit, 100.0)) == (10.0, 10, 11)
    t0, lo, hi = saddle(profile, 1000.0)
    assert t0 == pytest.approx(140.438, abs=1e-3) and (lo, hi) == (140, 141)
    lam, I = profile.lam, profile.I
    for x in (50.0, 400.0, 1000.0, 4000.0):
        floor = 2 * lam * math.sqrt(I * x)
        vals = {n: lam * x / n + lam * I * n for n in range(1, 2000)}
        assert min(vals.values()) >= floor - 1e-12
        _, lo, hi = saddle(profile, x)
        assert min(vals[lo], vals[hi]) - floor < lam * I * (1 + 1 / lo)


def test_chebyshev_series(profile):
    lam, I = profile.lam, profile.I
    for x in (10.0, 400.0, 4000.0):
        total = _cheb_series(lam, I, x)[0]
        partial = np.cumsum([math.exp(-lam * x / n - lam * I * n) for n in range(1, 3000)])
        assert np.all(partial <= total * (1 + 1e-14))
    xs = np.arange(100, 4001, 100)
    bounds = [chebyshev_bound(profile, float(x)).value for x in xs]
    scaled = np.array(bounds) * xs ** -0.25 * np.exp(profile.theta * np.sqrt(xs))
    assert scaled.max() / scaled.min() <= 2
    assert np.allclose(chebyshev_series_values(profile, xs), bounds, rtol=1e-12)


def test_delta_squared_homogeneous_limit(profile):
    assert profile.delta2 == pytest.approx(DELTA2_BASELINE, rel=1e-9)
    expect = 1 / (2 * profile.I ** 1.5 * (profile.lam + 2 * profile.I / profile.V_cond))
    assert profile.delta2 == pytest.approx(expect, rel=1e-14)


def test_delta_squared_against_dp(table, profile):
    """Var(tau | A = x) / sqrt(x) at the largest reachable x against the derived constant (10%)."""
    x = table.a_max
    law = conditional_tau(table, x)
    k = np.arange(1, law.size + 1)
    mean = float(law @ k)
    var = float(law @ (k - mean) ** 2)
    assert var / math.sqrt(x) == pytest.approx(profile.delta2, rel=0.10)


def test_assemble_single_negative_offset(profile, pmf):
    c = assemble_constants(profile, pmf, 0.3, [0.6])
    assert c.Q == pytest.approx(0.3 * 0.6 * 0.5, abs=1e-15)
    assert 0 < c.Q <= 0.5
    assert c.kappa == pytest.approx(c.kappa_closed_form, rel=1e-9)


def test_assemble_exact_constants(profile, pmf):
    c = assemble_constants(profile, pmf, 0.3, {1: 0.6})
    assert c.kappa == pytest.approx(KAPPA_BASELINE, rel=1e-8)
    assert c.to_dict()["status"] == "derived; unvalidated"


def test_assemble_truncation_too_coarse():
    p = LatticePMF.from_pairs([(-3, 0.3), (-1, 0.3), (0, 0.2), (1, 0.2)])
    prof = cramer_profile(p)
    with pytest.raises(TruncationTooCoarse):
        assemble_constants(prof, p, 0.5, [0.7])
    full = assemble_constants(prof, p, 0.5, [0.7, 0.8, 0.9])
    assert full.Q == pytest.approx(0.5 * (0.7 * 0.6 + 0.8 * 0.3 + 0.9 * 0.3), rel=1e-14)


def test_adaptive_simpson_accuracy():
    val, err = adaptive_simpson(math.sin, 0.0, math.pi, tol=1e-12)
    assert val == pytest.approx(2.0, abs=1e-12) and err >= 0
