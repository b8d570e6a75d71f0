"""Covariance kernels of the spherically averaged Gaussian family on R^4.

Every covariance here is expressed with the modified Bessel functions
I_0, I_1, I_2 and K_0, K_1, K_2. The scalar covariance of the
``mu``-contracted family has a closed form in three geometric regimes
(concentric spheres, one sphere inside the other, disjoint balls); when the
spheres intersect no closed form is known and the covariance is computed from
the Fourier-side integral representation.
"""

from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .errors import DomainError, UnsupportedRegimeError
from .oscillatory import bessel_product_integrals
from .special_functions import (
    bessel_i,
    bessel_i1_prime,
    bessel_i1_second,
    bessel_j,
    bessel_k,
    bessel_k1_prime,
    bessel_k1_second,
)

FOUR_PI2 = 4.0 * math.pi ** 2
TWO_PI2 = 2.0 * math.pi ** 2
EULER_GAMMA = 0.57721566490153286061

# below this radius G and the mu coefficients use the small-argument series
SERIES_THRESHOLD = 0.5
ORACLE_TOL = 1e-11
NEAR_CONCENTRIC = 1e-3


@dataclass(frozen=True)
class KernelParams:
    """Model constants: chaos coupling ``gamma``, ladder base, reference radius."""

    gamma: float = math.pi
    epsilon0: float = 0.5
    R: float = 1.0

    def __post_init__(self):
        g2 = self.gamma ** 2
        if not (self.gamma > 0 and g2 < 2.0 * math.pi ** 2):
            raise DomainError(f"need 0 < gamma^2 < 2 pi^2, got gamma^2 = {g2:.6g}")
        if not 0.0 < self.epsilon0 < 1.0:
            raise DomainError(f"epsilon0 must lie in (0, 1), got {self.epsilon0}")
        if not self.R > 0:
            raise DomainError(f"R must be positive, got {self.R}")

    @property
    def gamma_sq(self):
        return self.gamma ** 2


@dataclass(frozen=True)
class PointScale:
    """A center ``x`` in R^4 together with a sphere radius ``eps``."""

    x: tuple
    eps: float

    def __post_init__(self):
        x = tuple(float(v) for v in np.asarray(self.x, dtype=float).ravel())
        if len(x) != 4 or not all(math.isfinite(v) for v in x):
            raise DomainError("PointScale.x must be 4 finite coordinates")
        if not (math.isfinite(self.eps) and self.eps > 0):
            raise DomainError(f"PointScale.eps must be positive, got {self.eps}")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "eps", float(self.eps))

    def distance(self, other):
        return math.dist(self.x, other.x)


class Regime(enum.Enum):
    CONCENTRIC = "Concentric"
    INCLUSION = "Inclusion"
    DISJOINT = "Disjoint"
    OVERLAP = "Overlap"


def classify(eps1, eps2, d):
    """Regime tag from the two radii and the center distance.

    Equality cases on the inclusion and disjointness boundaries count as
    Overlap.
    """
    if d == 0.0:
        return Regime.CONCENTRIC
    if eps1 > d + eps2 or eps2 > d + eps1:
        return Regime.INCLUSION
    if d > eps1 + eps2:
        return Regime.DISJOINT
    return Regime.OVERLAP


def classify_regime(a, b):
    return classify(a.eps, b.eps, a.distance(b))


# -- variance profile --------------------------------------------------------

def _harmonic(n):
    return sum(1.0 / j for j in range(1, n + 1))


_N_SERIES = 24
_FACT = np.array([math.factorial(j) for j in range(_N_SERIES + 3)], dtype=float)
_M = np.arange(_N_SERIES)
# I_0 = c(q), I_1 = (r/2) a(q), I_2 = q b(q) with q = r^2/4
_A = 1.0 / (_FACT[_M] * _FACT[_M + 1])
_B = 1.0 / (_FACT[_M] * _FACT[_M + 2])
_C = 1.0 / _FACT[_M] ** 2
_A1 = _A[1:]
_T1 = np.array([_harmonic(m + 1) / _FACT[m + 1] ** 2 for m in range(_N_SERIES - 1)])
_S1 = np.array([(_harmonic(m) + _harmonic(m + 1)) * _A[m] for m in range(_N_SERIES)])


def _poly(coef, q):
    out = np.zeros_like(q)
    for c in coef[::-1]:
        out = out * q + c
    return out


def _dn_reduced(q):
    # (I_1^2 - I_0 I_2) / q, free of underflow as r -> 0
    return _poly(_A, q) ** 2 - _poly(_C, q) * _poly(_B, q)


def dn(r):
    """Denominator I_1(r)^2 - I_0(r) I_2(r), about r^2/8 near zero."""
    r = np.asarray(r, dtype=float)
    q = r * r / 4.0
    return np.where(r < SERIES_THRESHOLD, q * _dn_reduced(q),
                    bessel_i(1, r) ** 2 - bessel_i(0, r) * bessel_i(2, r))


def _g_series(r):
    # K_0 = -L I_0 + T0 and K_1 = 1/r + L I_1 - (r/4) S1 with
    # L = log(r/2) + gamma_E; substituting leaves 2L plus a remainder in
    # which the leading cancellation has been done by hand.
    q = r * r / 4.0
    L = np.log(r / 2.0) + EULER_GAMMA
    a, b = _poly(_A, q), _poly(_B, q)
    rest = _poly(_A1, q) - a * _poly(_S1, q) + 2.0 * q * b * _poly(_T1, q)
    return -(2.0 * L + rest / _dn_reduced(q)) / FOUR_PI2


def _g_direct(r):
    i0, i1, i2 = (bessel_i(k, r, scaled=True) for k in (0, 1, 2))
    k0, k1 = bessel_k(0, r, scaled=True), bessel_k(1, r, scaled=True)
    num = 2.0 * i1 * k1 + 2.0 * i2 * k0 - 1.0
    den = i1 * i1 - i0 * i2
    return -num * np.exp(-2.0 * r) / den / FOUR_PI2


def g_variance(r):
    """Variance profile ``G(r)``; strictly decreasing, ~ -log(r)/(2 pi^2) at 0."""
    scalar = np.ndim(r) == 0
    r = np.atleast_1d(np.asarray(r, dtype=float))
    if not np.all(np.isfinite(r)) or np.any(r <= 0):
        raise DomainError("g_variance requires finite r > 0")
    out = np.empty_like(r)
    small = r < SERIES_THRESHOLD
    if small.any():
        out[small] = _g_series(r[small])
    if (~small).any():
        out[~small] = _g_direct(r[~small])
    return float(out[0]) if scalar else out


_LOG_R_MIN, _LOG_R_MAX = math.log(1e-300), math.log(300.0)


def g_inverse(t):
    """Radius ``r`` with ``G(r) = t``; strictly decreasing in ``t``."""
    t = float(t)
    if not (math.isfinite(t) and t > 0):
        raise DomainError("g_inverse requires finite t > 0")
    f = lambda u: g_variance(math.exp(u)) - t
    if f(_LOG_R_MIN) < 0 or f(_LOG_R_MAX) > 0:
        raise DomainError(f"t = {t} is outside the range of G")
    u = brentq(f, _LOG_R_MIN, _LOG_R_MAX, xtol=1e-15, rtol=1e-15, maxiter=200)
    return math.exp(u)


def mu_coefficients(eps):
    """Coefficients ``(f1, f2)`` of the sphere and radial-derivative parts.

    ``(f1, f2) -> (2, 0)`` as ``eps -> 0``.
    """
    scalar = np.ndim(eps) == 0
    e = np.atleast_1d(np.asarray(eps, dtype=float))
    if np.any(e <= 0):
        raise DomainError("mu_coefficients requires eps > 0")
    f1 = np.empty_like(e)
    f2 = np.empty_like(e)
    small = e < SERIES_THRESHOLD
    if small.any():
        es = e[small]
        q = es * es / 4.0
        a, b = _poly(_A, q), _poly(_B, q)
        den = _dn_reduced(q)
        f1[small] = 2.0 * (a - b) / den
        f2[small] = -es * b / den
    big = ~small
    if big.any():
        eb = e[big]
        i1, i2 = bessel_i(1, eb), bessel_i(2, eb)
        den = dn(eb)
        f1[big] = (eb * i1 - 2.0 * i2) / den
        f2[big] = -eb * i2 / den
    if scalar:
        return float(f1[0]), float(f2[0])
    return f1, f2


# -- scalar covariance -------------------------------------------------------

def _inclusion(outer, d):
    return bessel_i(0, d) * g_variance(outer) - bessel_i(2, d) / dn(outer) / FOUR_PI2


def _disjoint(d):
    return bessel_k(0, d) / TWO_PI2


def cov_closed_form(eps1, eps2, d):
    """Closed-form scalar covariance; raises in the Overlap regime."""
    regime = classify(eps1, eps2, d)
    if regime is Regime.CONCENTRIC:
        return g_variance(max(eps1, eps2))
    if regime is Regime.INCLUSION:
        return float(_inclusion(max(eps1, eps2), d))
    if regime is Regime.DISJOINT:
        return float(_disjoint(d))
    raise UnsupportedRegimeError("no closed form for overlapping spheres; use the integral oracle")


def cov_scalar(a, b, params=None):
    """Covariance of the mu-contracted variables at two PointScales.

    ``params`` is accepted for interface uniformity; the kernel does not
    depend on ``gamma``.
    """
    d = a.distance(b)
    if classify(a.eps, b.eps, d) is Regime.OVERLAP:
        return cov_overlap_quadrature(a, b)
    return cov_closed_form(a.eps, b.eps, d)


def cov_scalar_array(eps1, eps2, d):
    """Vectorised scalar covariance over broadcast arrays of radii and distance."""
    eps1, eps2, d = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (eps1, eps2, d)))
    out = np.empty(eps1.shape)
    conc = d == 0.0
    incl = ~conc & ((eps1 > d + eps2) | (eps2 > d + eps1))
    disj = ~conc & ~incl & (d > eps1 + eps2)
    over = ~conc & ~incl & ~disj
    outer = np.maximum(eps1, eps2)
    if conc.any():
        out[conc] = g_variance(outer[conc])
    if incl.any():
        out[incl] = _inclusion(outer[incl], d[incl])
    if disj.any():
        out[disj] = _disjoint(d[disj])
    if over.any():
        # lattice geometries repeat the same triple many times
        trip = np.stack([eps1[over], eps2[over], d[over]], axis=1)
        uniq, inv = np.unique(np.round(trip, 13), axis=0, return_inverse=True)
        vals = np.array([_overlap_value(*row) for row in uniq])
        out[over] = vals[inv.ravel()]
    return out


def spectral_amplitude(eps, k):
    """Radial Fourier profile of the mu measure at radius ``eps``.

    With ``a(k) = f1 J_1(eps k)/(eps k) - f2 J_2(eps k)/eps`` (so ``a(0) = 1``)
    the scalar covariance is

        C(d) = 1/(pi^2 d) int_0^inf a_1(k) a_2(k) k^2 J_1(k d) / (1 + k^2)^2 dk,

    and at d = 0 the same with ``k^3 / 2`` in place of ``k^2 J_1(k d) / d``.
    """
    f1, f2 = mu_coefficients(eps)
    k = np.asarray(k, dtype=float)
    x = eps * k
    safe = np.where(x > 0, x, 1.0)
    ratio = np.where(x > 0, bessel_j(1, safe) / safe, 0.5)
    return f1 * ratio - f2 * bessel_j(2, eps * k) / eps


# -- vector covariance -------------------------------------------------------

def mat_a(r):
    return np.array([[bessel_k1_prime(r), bessel_k(1, r) / r],
                     [bessel_k1_second(r), -bessel_k(2, r) / r]])


def mat_b(r):
    i1 = bessel_i(1, r)
    return np.array([[i1 / r, bessel_i1_prime(r)],
                     [bessel_i(2, r) / r, bessel_i1_second(r)]])


def mat_c(r):
    i1 = bessel_i(1, r)
    return np.array([[i1 / r, 0.0], [bessel_i(2, r), i1 / r]])


def mat_d(r):
    k1 = bessel_k(1, r)
    return np.array([[-bessel_k(2, r), k1 / r], [k1 / r, 0.0]])


def cov_vector(a, b):
    """2x2 covariance of (sphere average, radial derivative) at ``a`` and ``b``.

    Rows index the variables at ``a``, columns those at ``b``.
    """
    d = a.distance(b)
    e1, e2 = a.eps, b.eps
    regime = classify(e1, e2, d)
    if regime is Regime.OVERLAP:
        raise UnsupportedRegimeError(
            "vector covariance has no closed form for overlapping spheres; "
            "use cov_integral_oracle")
    swap = e1 < e2
    if swap:
        e1, e2 = e2, e1
    if regime is Regime.CONCENTRIC:
        m = -mat_a(e1) @ mat_b(e2).T / FOUR_PI2
    elif regime is Regime.INCLUSION:
        m = -mat_a(e1) @ mat_c(d) @ mat_b(e2).T / TWO_PI2
    else:
        m = -mat_b(e1) @ mat_d(d) @ mat_b(e2).T / TWO_PI2
    return m.T if swap else m


# -- integral oracle ---------------------------------------------------------

@functools.lru_cache(maxsize=65536)
def _oracle_cached(eps1, eps2, d):
    if d == 0.0:
        vals, _ = bessel_product_integrals(
            (eps1, eps2), [(1, (1, 1)), (2, (1, 2)), (2, (2, 1)), (3, (2, 2))], ORACLE_TOL)
        pref = 1.0 / (TWO_PI2 * eps1 * eps2)
    else:
        vals, _ = bessel_product_integrals(
            (eps1, eps2, d),
            [(0, (1, 1, 1)), (1, (1, 2, 1)), (1, (2, 1, 1)), (2, (2, 2, 1))], ORACLE_TOL * d)
        pref = 1.0 / (math.pi ** 2 * eps1 * eps2 * d)
    ss, sd, ds, dd = pref * vals
    return ss, -sd, -ds, dd


def oracle_matrix(eps1, eps2, d):
    """All four integral-form covariances as ``[[ss, sd], [ds, dd]]``.

    For centers closer than ``NEAR_CONCENTRIC * min(eps)`` the three-Bessel
    integrand oscillates over a range of length ~ 1/d; there the value is
    interpolated linearly in ``d`` between the concentric value and the value
    at the cutoff (error ~ 1e-9 relative at the cutoff, less below it).
    """
    eps1, eps2, d = float(eps1), float(eps2), float(d)
    d0 = NEAR_CONCENTRIC * min(eps1, eps2)
    if 0.0 < d < d0:
        w = d / d0
        m = (1.0 - w) * np.array(_oracle_cached(eps1, eps2, 0.0)) \
            + w * np.array(_oracle_cached(eps1, eps2, d0))
        return m.reshape(2, 2)
    return np.array(_oracle_cached(eps1, eps2, d)).reshape(2, 2)


_WHICH = {"ss": (0, 0), "sd": (0, 1), "ds": (1, 0), "dd": (1, 1)}


def cov_integral_oracle(a, b, which):
    """Integral-form covariance of sphere / derivative variables, any regime.

    ``which`` is ``"ss"``, ``"sd"``, ``"ds"`` or ``"dd"``; the first letter
    refers to ``a`` and the second to ``b``.
    """
    if which not in _WHICH:
        raise ValueError(f"which must be one of {sorted(_WHICH)}")
    return float(oracle_matrix(a.eps, b.eps, a.distance(b))[_WHICH[which]])


def contract(matrix, eps1, eps2):
    """Apply the mu coefficients on both sides of a 2x2 covariance."""
    u = np.array(mu_coefficients(eps1))
    v = np.array(mu_coefficients(eps2))
    return float(u @ matrix @ v)


def _overlap_value(eps1, eps2, d):
    return contract(oracle_matrix(eps1, eps2, d), eps1, eps2)


def cov_overlap_quadrature(a, b):
    """Scalar covariance for intersecting spheres from the integral forms."""
    return _overlap_value(a.eps, b.eps, a.distance(b))
