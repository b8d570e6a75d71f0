import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gff4d.errors import DomainError, UnsupportedRegimeError
from gff4d.kernels import (
    EULER_GAMMA,
    KernelParams,
    PointScale,
    Regime,
    classify_regime,
    contract,
    cov_integral_oracle,
    cov_overlap_quadrature,
    cov_scalar,
    cov_scalar_array,
    cov_vector,
    g_inverse,
    g_variance,
    mu_coefficients,
    oracle_matrix,
)
from gff4d.special_functions import bessel_i, bessel_i1_prime, bessel_k, bessel_k1_prime

mp.mp.dps = 30
TWO_PI2 = 2 * math.pi ** 2


def ps(x, eps):
    return PointScale((x, 0.0, 0.0, 0.0), eps)


def _g_mp(r):
    r = mp.mpf(r)
    i0, i1, i2 = (mp.besseli(k, r) for k in (0, 1, 2))
    k0, k1 = mp.besselk(0, r), mp.besselk(1, r)
    return float(-(2 * i1 * k1 + 2 * i2 * k0 - 1) / (i1 ** 2 - i0 * i2) / (4 * mp.pi ** 2))


def test_params_validation():
    KernelParams(gamma=math.pi)
    with pytest.raises(DomainError):
        KernelParams(gamma=math.sqrt(3) * math.pi)
    with pytest.raises(DomainError):
        KernelParams(epsilon0=1.0)
    with pytest.raises(DomainError):
        PointScale((0, 0, 0), 1.0)
    with pytest.raises(DomainError):
        ps(0.0, -1.0)


def test_g_reference_value():
    assert g_variance(1.0) == pytest.approx(0.035248, abs=1e-5)


@pytest.mark.parametrize("r", [1e-8, 1e-5, 1e-3, 0.1, 0.3, 0.4999, 0.5, 0.7, 1.0, 4.0, 20.0])
def test_g_against_high_precision(r):
    assert g_variance(r) == pytest.approx(_g_mp(r), rel=1e-12)


def test_g_small_r_asymptotic():
    # 2 pi^2 G(r) + log r -> log 2 - gamma_E + 1/2
    limit = math.log(2) - EULER_GAMMA + 0.5
    for r in [1e-4, 1e-6, 1e-10]:
        assert TWO_PI2 * g_variance(r) + math.log(r) == pytest.approx(limit, abs=1e-6)


def test_g_decreasing_and_positive():
    r = np.logspace(-6, 1.5, 400)
    g = g_variance(r)
    assert np.all(g > 0)
    assert np.all(np.diff(g) < 0)
    assert g_variance(0.5) > g_variance(1.0)


@pytest.mark.parametrize("r", [1e-4, 0.01, 0.3, 1.0, 3.0, 12.0])
def test_g_inverse_round_trip(r):
    assert g_inverse(g_variance(r)) == pytest.approx(r, rel=1e-9, abs=1e-12)


def test_g_inverse_decreasing():
    ts = np.linspace(0.01, 2.0, 30)
    rs = [g_inverse(t) for t in ts]
    assert np.all(np.diff(rs) < 0)
    with pytest.raises(DomainError):
        g_inverse(0.0)


def test_mu_coefficients():
    f1, f2 = mu_coefficients(1.0)
    assert f1 == pytest.approx(1.9904, abs=1e-3)
    assert f2 == pytest.approx(-0.9201, abs=1e-3)
    f1, f2 = mu_coefficients(1e-5)
    assert f1 == pytest.approx(2.0, abs=1e-8)
    assert f2 / 1e-5 == pytest.approx(-1.0, abs=1e-8)
    # series and direct branches meet
    lo, hi = mu_coefficients(np.array([0.5 - 1e-12, 0.5]))
    assert abs(lo[0] - lo[1]) < 1e-11 and abs(hi[0] - hi[1]) < 1e-11


def test_mu_coefficients_match_b_inverse():
    # zeta^T B^{-1}(eps) with zeta = (1, 1) must equal (f1, f2)
    for eps in [0.05, 0.5, 1.3, 4.0]:
        i1, i2 = bessel_i(1, eps), bessel_i(2, eps)
        b = np.array([[i1 / eps, bessel_i1_prime(eps)],
                      [i2 / eps, i1 - i2 / eps]])
        row = np.ones(2) @ np.linalg.inv(b)
        np.testing.assert_allclose(row, mu_coefficients(eps), rtol=1e-10)


def test_classify_examples():
    assert classify_regime(ps(0, 1.0), ps(0, 0.3)) is Regime.CONCENTRIC
    assert classify_regime(ps(0, 1.0), ps(3, 1.0)) is Regime.DISJOINT
    assert classify_regime(ps(0, 2.0), ps(1, 0.5)) is Regime.INCLUSION
    assert classify_regime(ps(0, 1.0), ps(1, 0.5)) is Regime.OVERLAP
    # tangencies go to Overlap
    assert classify_regime(ps(0, 1.0), ps(2, 1.0)) is Regime.OVERLAP
    assert classify_regime(ps(0, 1.5), ps(1, 0.5)) is Regime.OVERLAP


def test_scalar_examples():
    assert cov_scalar(ps(0, 0.2), ps(1, 0.3)) == pytest.approx(0.4210244382 / TWO_PI2, abs=1e-9)
    assert cov_scalar(ps(0, 1.0), ps(0, 1.0)) == g_variance(1.0)
    assert cov_scalar(ps(0, 0.3), ps(0, 1.0)) == g_variance(1.0)


def test_concentric_sigma_sigma_identity():
    i1, k1 = bessel_i(1, 1.0), bessel_k(1, 1.0)
    expected = -(bessel_k1_prime(1.0) * i1 + k1 * bessel_i1_prime(1.0)) / (4 * math.pi ** 2)
    assert cov_integral_oracle(ps(0, 1.0), ps(0, 1.0), "ss") == pytest.approx(expected, abs=1e-12)


def test_vector_matches_oracle_each_regime():
    cases = [(1.0, 1.0, 0.0), (0.7, 0.2, 0.0), (0.2, 0.7, 0.0), (2.0, 0.5, 1.0),
             (0.5, 2.0, 1.0), (0.3, 0.6, 2.0)]
    for e1, e2, d in cases:
        v = cov_vector(ps(0, e1), ps(d, e2))
        np.testing.assert_allclose(v, oracle_matrix(e1, e2, d), atol=1e-10)


def test_vector_disjoint_contraction_and_decay():
    v = cov_vector(ps(0, 0.4), ps(2.0, 0.7))
    assert contract(v, 0.4, 0.7) == pytest.approx(bessel_k(0, 2.0) / TWO_PI2, abs=1e-12)
    far = cov_vector(ps(0, 0.4), ps(40.0, 0.7))
    assert np.abs(far).max() < 1e-15
    with pytest.raises(UnsupportedRegimeError):
        cov_vector(ps(0, 1.0), ps(1.0, 0.5))


def test_regime_agreement_sample():
    rng = np.random.default_rng(7)
    for _ in range(15):
        e1, e2 = rng.uniform(0.05, 1.5, 2)
        for d in (0.0, abs(e1 - e2) * rng.uniform(0.05, 0.95),
                  (e1 + e2) * rng.uniform(1.05, 3.0)):
            a, b = ps(0, e1), ps(d, e2)
            want = cov_scalar(a, b)
            got = contract(oracle_matrix(e1, e2, d), e1, e2)
            assert abs(want - got) <= 1e-6


def test_radius_independence():
    base = cov_scalar(ps(0, 2.0), ps(0.5, 0.1))
    for e2 in np.linspace(0.01, 1.49, 9):
        assert abs(cov_scalar(ps(0, 2.0), ps(0.5, e2)) - base) <= 1e-9
    base = cov_scalar(ps(0, 0.1), ps(1.0, 0.1))
    for e1, e2 in [(0.2, 0.3), (0.45, 0.5), (0.01, 0.9)]:
        assert abs(cov_scalar(ps(0, e1), ps(1.0, e2)) - base) <= 1e-9


def test_disjoint_log_growth():
    # the ratio approaches 1 only logarithmically: K0(d) + log d -> log 2 - gamma_E
    for d, tol in [(1e-2, 0.05), (1e-3, 0.02), (1e-4, 0.015)]:
        ratio = cov_scalar(ps(0, d / 4), ps(d, d / 4)) / (-math.log(d) / TWO_PI2)
        assert abs(ratio - 1.0) <= tol
        assert bessel_k(0, d) + math.log(d) == pytest.approx(
            math.log(2) - EULER_GAMMA, abs=d)


@pytest.mark.parametrize("outer,inner", [(1.0, 0.5), (0.6, 0.3)])
def test_overlap_continuity_inclusion_boundary(outer, inner):
    d_star = outer - inner
    inside = cov_scalar(ps(0, outer), ps(d_star - 1e-6, inner))
    over = cov_overlap_quadrature(ps(0, outer), ps(d_star + 1e-6, inner))
    assert abs(inside - over) <= 1e-4
    at = cov_scalar(ps(0, outer), ps(d_star, inner))
    assert abs(at - inside) <= 1e-4


@pytest.mark.parametrize("e1,e2", [(0.5, 0.5), (0.3, 0.8)])
def test_overlap_continuity_disjoint_boundary(e1, e2):
    d_star = e1 + e2
    outside = cov_scalar(ps(0, e1), ps(d_star + 1e-6, e2))
    over = cov_overlap_quadrature(ps(0, e1), ps(d_star - 1e-6, e2))
    assert abs(outside - over) <= 1e-4


def test_overlap_symmetric():
    a, b = ps(0, 0.7), ps(0.6, 0.4)
    assert abs(cov_scalar(a, b) - cov_scalar(b, a)) <= 1e-9


@settings(max_examples=40, deadline=None)
@given(st.floats(0.05, 1.5), st.floats(0.05, 1.5), st.floats(0.0, 4.0))
def test_scalar_symmetry(e1, e2, d):
    a, b = ps(0, e1), ps(d, e2)
    assert cov_scalar(a, b) == pytest.approx(cov_scalar(b, a), abs=1e-9)


def test_gram_psd():
    pts = [PointScale((0.25 * i, 0.25 * j, 0.0, 0.0), eps)
           for i in range(4) for j in range(4) for eps in (0.25, 0.125)]
    e = np.array([p.eps for p in pts])
    xs = np.array([p.x for p in pts])
    d = np.linalg.norm(xs[:, None, :] - xs[None, :, :], axis=-1)
    gram = cov_scalar_array(e[:, None], e[None, :], d)
    np.testing.assert_allclose(gram, gram.T, atol=1e-12)
    lam = np.linalg.eigvalsh(gram)
    assert lam.min() >= -1e-8 * np.trace(gram) / len(pts)


def test_isometry_invariance():
    rng = np.random.default_rng(3)
    shift = rng.normal(size=4)
    q, _ = np.linalg.qr(rng.normal(size=(4, 4)))
    a = PointScale((0.1, 0.2, 0.3, 0.4), 0.3)
    b = PointScale((0.9, -0.2, 0.0, 0.1), 0.5)
    moved = [PointScale(q @ np.array(p.x) + shift, p.eps) for p in (a, b)]
    assert cov_scalar(*moved) == pytest.approx(cov_scalar(a, b), abs=1e-12)


def test_oracle_decays_with_distance():
    vals = [abs(cov_integral_oracle(ps(0, 0.5), ps(d, 0.5), "ss")) for d in (2.0, 8.0, 30.0)]
    assert vals[0] > vals[1] > vals[2]
    assert vals[2] < 1e-10
