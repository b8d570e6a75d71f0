"""Quadrature for integrals of rational weights times products of Bessel J.

Computes, for a shared set of scales ``c_1..c_n`` (n = 2 or 3) and a family of
terms ``(p, (k_1..k_n))``,

    int_0^inf tau^p / (1 + tau^2)^2 * prod_i J_{k_i}(c_i tau) dtau.

The range is split at ``T = 30 / min(c)``. On ``[0, T]`` the integrand is
integrated directly with Gauss-Legendre panels no longer than half the fastest
period, refined adaptively. Beyond ``T`` every factor is replaced by its
Hankel expansion, the product splits into pure exponentials ``e^{i w tau}``
with ``w = sum s_i c_i``, and each piece is integrated along the real axis up
to ``T_w = max(T, 5/|w|)`` and then along a ray into the upper (or lower)
half plane with Gauss-Laguerre, where it decays exponentially. The ``w = 0``
pieces are non-oscillatory and are mapped onto a finite interval.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from numpy.polynomial.laguerre import laggauss
from numpy.polynomial.legendre import leggauss

from .errors import QuadratureError
from .special_functions import bessel_j, hankel_amplitude

HANKEL_SWITCH = 30.0
_GL_LO, _GL_HI = leggauss(16), leggauss(24)
_LAG_LO, _LAG_HI = laggauss(30), laggauss(45)
_MAX_PANELS = 200000


def _weight(tau, p):
    return tau ** p / (1.0 + tau * tau) ** 2


def _gl(rule, a, b):
    x, w = rule
    half = 0.5 * (b - a)
    return a[:, None] + half[:, None] * (x + 1.0), half[:, None] * w


class _Family:
    def __init__(self, scales, terms):
        self.scales = tuple(float(c) for c in scales)
        self.terms = [(int(p), tuple(ks)) for p, ks in terms]
        self.orders = sorted({(i, k) for _, ks in self.terms for i, k in enumerate(ks)})

    def integrand(self, tau):
        # evaluate every needed J_k(c_i tau) once and share across terms
        shape = tau.shape
        flat = tau.ravel()
        cache = {(i, k): bessel_j(k, self.scales[i] * flat) for i, k in self.orders}
        out = np.empty((len(self.terms), flat.size))
        for j, (p, ks) in enumerate(self.terms):
            val = _weight(flat, p)
            for i, k in enumerate(ks):
                val = val * cache[(i, k)]
            out[j] = val
        return out.reshape((len(self.terms),) + shape)


def _head(family, t_end, tol):
    n_terms = len(family.terms)
    fastest = sum(family.scales)
    width = min(1.0, 0.5 * math.pi / fastest)
    n0 = max(1, math.ceil(t_end / width))
    edges = np.linspace(0.0, t_end, n0 + 1)
    pending = [(edges[:-1], edges[1:])]
    total = np.zeros(n_terms)
    err = 0.0
    used = 0
    while pending:
        a, b = pending.pop()
        used += a.size
        if used > _MAX_PANELS:
            raise QuadratureError("panel budget exhausted on the finite range", err)
        x, w = _gl(_GL_LO, a, b)
        lo = (family.integrand(x) * w).sum(axis=-1)
        x, w = _gl(_GL_HI, a, b)
        hi = (family.integrand(x) * w).sum(axis=-1)
        diff = np.abs(hi - lo).max(axis=0)
        local = tol * (b - a) / t_end
        ok = diff <= local
        total += hi[:, ok].sum(axis=1)
        err += diff[ok].sum()
        if (~ok).any():
            ma, mb = a[~ok], b[~ok]
            mid = 0.5 * (ma + mb)
            pending.append((np.concatenate([ma, mid]), np.concatenate([mid, mb])))
    return total, err


def _amplitude(family, ks, p, signs, z):
    val = _weight(z, p).astype(complex) / 2.0 ** len(ks)
    for c, k, s in zip(family.scales, ks, signs):
        val = val * hankel_amplitude(k, c * z, s)
    return val


def _tail_piece(family, ks, p, signs, t0):
    """Integral over [t0, inf) of amplitude * e^{i w tau} for one sign pattern."""
    omega = sum(s * c for s, c in zip(signs, family.scales))
    scale = max(family.scales)
    if abs(omega) <= 1e-13 * scale:
        # non-oscillatory: tau = t0 / v, v in (0, 1]
        out = []
        for rule in (_GL_LO, _GL_HI):
            edges = np.array([0.0, 0.05, 0.2, 0.5, 1.0])
            v, w = _gl(rule, edges[:-1], edges[1:])
            tau = t0 / v
            out.append(np.sum(_amplitude(family, ks, p, signs, tau) * w * t0 / v ** 2))
        return out[1], abs(out[1] - out[0])
    t_w = max(t0, 5.0 / abs(omega))
    total = 0j
    err = 0.0
    if t_w > t0:
        # real-axis stretch with geometric panels of at most half a period
        edges = [t0]
        while edges[-1] < t_w:
            step = min(0.5 * edges[-1], math.pi / abs(omega))
            edges.append(min(t_w, edges[-1] + step))
        edges = np.array(edges)
        res = []
        for rule in (_GL_LO, _GL_HI):
            x, w = _gl(rule, edges[:-1], edges[1:])
            res.append(np.sum(_amplitude(family, ks, p, signs, x) * np.exp(1j * omega * x) * w))
        total += res[1]
        err += abs(res[1] - res[0])
    direction = 1j * math.copysign(1.0, omega)
    res = []
    for nodes, weights in (_LAG_LO, _LAG_HI):
        # tau = t_w + direction * u / |w|, e^{i w tau} = e^{i w t_w} e^{-u}
        z = t_w + direction * nodes / abs(omega)
        amp = _amplitude(family, ks, p, signs, z)
        res.append(np.exp(1j * omega * t_w) * direction / abs(omega) * np.sum(weights * amp))
    total += res[1]
    err += abs(res[1] - res[0])
    return total, err


def _tail(family, t0):
    n = len(family.scales)
    values = np.zeros(len(family.terms))
    err = 0.0
    for j, (p, ks) in enumerate(family.terms):
        acc = 0j
        # patterns with s_1 = -1 are conjugates of those with s_1 = +1
        for rest in itertools.product((1, -1), repeat=n - 1):
            piece, e = _tail_piece(family, ks, p, (1,) + rest, t0)
            acc += piece
            err += 2.0 * e
        values[j] = 2.0 * acc.real
    return values, err


def bessel_product_integrals(scales, terms, tol=1e-12):
    """Integrals of ``tau^p (1+tau^2)^-2 prod J_{k_i}(c_i tau)`` over (0, inf).

    Parameters
    ----------
    scales : sequence of float
        Positive scales ``c_i``, two or three of them.
    terms : sequence of (int, tuple of int)
        Power ``p`` and the Bessel orders, one per scale.
    tol : float
        Absolute error target for each integral.

    Returns
    -------
    values : ndarray
    error : float
        Combined error estimate (difference of embedded rules).
    """
    if min(scales) <= 0:
        raise ValueError("scales must be positive")
    family = _Family(scales, terms)
    t0 = HANKEL_SWITCH / min(family.scales)
    head, e1 = _head(family, t0, 0.5 * tol)
    tail, e2 = _tail(family, t0)
    err = e1 + e2
    if not err <= tol:
        raise QuadratureError("Bessel product integral did not converge", err)
    return head + tail, err
