import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gff4d.errors import BesselOverflowError, DomainError
from gff4d.special_functions import (
    bessel_i,
    bessel_i1_prime,
    bessel_j,
    bessel_k,
    bessel_k1_prime,
    bessel_k1_second,
    hankel_amplitude,
)

mp.mp.dps = 30

GRID = np.logspace(-3, math.log10(30.0), 60)


def _series_j(k, r):
    # independent high precision power series
    r = mp.mpf(r)
    return float(mp.nsum(lambda m: (-1) ** m * (r / 2) ** (2 * m + k)
                         / (mp.factorial(m) * mp.factorial(m + k)), [0, mp.inf]))


def _series_i(k, r):
    r = mp.mpf(r)
    return float(mp.nsum(lambda m: (r / 2) ** (2 * m + k)
                         / (mp.factorial(m) * mp.factorial(m + k)), [0, mp.inf]))


def test_reference_values():
    assert bessel_j(1, 1.0) == pytest.approx(0.4400505857, abs=1e-10)
    assert bessel_i(1, 1.0) == pytest.approx(0.5651591040, abs=1e-10)
    assert bessel_k(0, 1.0) == pytest.approx(0.4210244382, abs=1e-10)
    assert bessel_k(1, 1.0) == pytest.approx(0.6019072302, abs=1e-10)


def test_limits_at_origin():
    assert bessel_j(0, 0.0) == 1.0
    assert bessel_j(1, 0.0) == 0.0
    assert bessel_i(0, 0.0) == 1.0
    assert bessel_i(2, 0.0) == 0.0
    assert bessel_i1_prime(0.0) == 0.5


def test_k0_matches_cosh_integral():
    val = mp.quad(lambda t: mp.exp(-mp.cosh(t)), [0, 2, 4, 8])
    assert bessel_k(0, 1.0) == pytest.approx(float(val), rel=1e-13)


def test_j1_matches_angular_integral():
    # J_k(r) = r^k / (2^k sqrt(pi) Gamma(k+1/2)) int_0^pi e^{i r cos t} sin^{2k} t dt
    r = 1.0
    integral = mp.quad(lambda t: mp.cos(r * mp.cos(t)) * mp.sin(t) ** 2, [0, mp.pi])
    val = r / (2 * mp.sqrt(mp.pi) * mp.gamma(1.5)) * integral
    assert bessel_j(1, r) == pytest.approx(float(val), abs=1e-13)


@pytest.mark.parametrize("k", [0, 1, 2])
def test_j_against_series(k):
    for r in np.linspace(0.01, 20.0, 40):
        assert abs(bessel_j(k, r) - _series_j(k, r)) <= 1e-12


@pytest.mark.parametrize("k", [0, 1, 2])
def test_j_large_argument(k):
    # relative to the envelope; pointwise relative error is meaningless at zeros
    for r in [26.0, 49.9, 51.0, 137.5, 1000.0, 12345.6]:
        ref = float(mp.besselj(k, r))
        env = math.sqrt(2.0 / (math.pi * r))
        assert abs(bessel_j(k, r) - ref) <= 1e-10 * env


@pytest.mark.parametrize("k", [0, 1, 2])
def test_i_against_series(k):
    for r in GRID:
        assert bessel_i(k, r) == pytest.approx(_series_i(k, r), rel=1e-12)


@pytest.mark.parametrize("k", [0, 1, 2])
def test_k_against_mpmath(k):
    for r in np.concatenate([[1e-6, 1e-5, 1e-4], GRID]):
        assert bessel_k(k, r) == pytest.approx(float(mp.besselk(k, r)), rel=1e-12)


def test_scaled_forms_large_argument():
    for r in [50.0, 300.0, 1000.0, 5000.0]:
        i_ref = float(mp.besseli(1, r) * mp.exp(-r))
        k_ref = float(mp.besselk(1, r) * mp.exp(r))
        assert bessel_i(1, r, scaled=True) == pytest.approx(i_ref, rel=1e-12)
        assert bessel_k(1, r, scaled=True) == pytest.approx(k_ref, rel=1e-12)


def test_wronskian():
    lhs = bessel_i(1, GRID) * bessel_k(2, GRID) + bessel_i(2, GRID) * bessel_k(1, GRID)
    assert np.all(np.abs(lhs - 1.0 / GRID) <= 1e-10 / GRID)


def test_recurrences():
    i0, i1, i2 = (bessel_i(k, GRID) for k in (0, 1, 2))
    np.testing.assert_allclose(i0 - i2, 2.0 * i1 / GRID, rtol=1e-10)
    # derivatives checked against mpmath differentiation, not differences
    for r in GRID[::6]:
        d_i1 = float(mp.diff(lambda t: mp.besseli(1, t), r))
        d_k1 = float(mp.diff(lambda t: mp.besselk(1, t), r))
        dd_k1 = float(mp.diff(lambda t: mp.besselk(1, t), r, 2))
        assert bessel_i1_prime(r) == pytest.approx(d_i1, rel=1e-10)
        assert bessel_k1_prime(r) == pytest.approx(d_k1, rel=1e-10)
        assert bessel_k1_second(r) == pytest.approx(dd_k1, rel=1e-10)


@settings(max_examples=200, deadline=None)
@given(st.floats(min_value=1e-6, max_value=500.0))
def test_j1_bounds(r):
    j1 = bessel_j(1, r)
    assert abs(j1) <= 0.6
    assert abs(j1 / r) <= 0.5


@settings(max_examples=200, deadline=None)
@given(st.sampled_from([0, 1, 2]), st.floats(min_value=1e-6, max_value=600.0))
def test_positivity(k, r):
    assert bessel_i(k, r) > 0
    assert bessel_k(k, r) > 0


def test_k_monotone_decay():
    r = np.linspace(0.5, 100.0, 500)
    vals = bessel_k(1, r)
    assert np.all(np.diff(vals) < 0)
    assert vals[-1] < 1e-40


def test_hankel_amplitude_reconstructs_j():
    z = np.array([30.0, 80.0, 400.0])
    for k in (0, 1, 2):
        approx = 0.5 * (hankel_amplitude(k, z, 1) * np.exp(1j * z)
                        + hankel_amplitude(k, z, -1) * np.exp(-1j * z))
        np.testing.assert_allclose(approx.real, bessel_j(k, z), atol=1e-14)
        np.testing.assert_allclose(approx.imag, 0.0, atol=1e-14)


def test_errors():
    with pytest.raises(DomainError):
        bessel_k(0, 0.0)
    with pytest.raises(DomainError):
        bessel_j(3, 1.0)
    with pytest.raises(DomainError):
        bessel_j(0, float("nan"))
    with pytest.raises(BesselOverflowError):
        bessel_i(0, 800.0)
