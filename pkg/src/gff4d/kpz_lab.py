"""Scaling exponents and the KPZ relation, by two routes.

The exact route follows the log of the conditional ball mass,
``Y_t = gamma X_t - beta t`` with ``beta = 8 pi^2 - gamma^2 / 2`` and ``X`` a
standard Brownian motion, down to the first time it reaches ``log Lambda``.
Its Laplace transform is known in closed form, so the quantum exponent of a set
with Euclidean exponent ``kappa`` can be read off a log-log fit and compared
with the quadratic relation.

The empirical route forms isothermal neighbourhoods directly from sampled
chaos measures on a grid. It is coarse by construction.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import integrate as sci_integrate
from scipy.optimize import brentq
from scipy.stats import linregress

from .chaos_measure import TiltedMeasure, density_field, tilt
from .errors import (
    CensoringError,
    DomainError,
    QuadratureError,
    RangeError,
    StatisticsError,
)
from .field_sampler import CirculantSampler, FieldSample, GridSpec, ScaleLadder
from .kernels import (
    EULER_GAMMA,
    TWO_PI2,
    KernelParams,
    _B,
    _dn_reduced,
    _poly,
    dn,
    g_inverse,
    g_variance,
)
from .special_functions import bessel_i, bessel_k

log = logging.getLogger(__name__)

EIGHT_PI2 = 8.0 * math.pi ** 2
CENSOR_BUDGET = 1e-3
REFINE_LEVELS = 12
CHUNK = 1 << 14
_REJECT_CAP = 400


def drift(gamma):
    """``beta = 8 pi^2 - gamma^2 / 2``, minus the drift of the log mass process."""
    return EIGHT_PI2 - 0.5 * gamma ** 2


def _check_gamma(gamma):
    g2 = float(gamma) ** 2
    if not (gamma > 0 and g2 < TWO_PI2):
        raise DomainError(f"need 0 < gamma^2 < 2 pi^2, got gamma^2 = {g2:.6g}")


# -- the quadratic relation --------------------------------------------------------


def kpz_quadratic(K, gamma):
    """``kappa = K (1 - c) + c K^2`` with ``c = gamma^2 / 16 pi^2``."""
    _check_gamma(gamma)
    K = np.asarray(K, dtype=float)
    if np.any((K < 0) | (K > 1)):
        raise DomainError("K must lie in [0, 1]")
    c = gamma ** 2 / (2 * EIGHT_PI2)
    out = K * (1 - c) + c * K * K
    return float(out) if out.ndim == 0 else out


def kpz_inverse(kappa, gamma):
    """Root in ``[0, 1]`` of the quadratic relation, in the cancellation-free form."""
    _check_gamma(gamma)
    kappa = np.asarray(kappa, dtype=float)
    if np.any((kappa < 0) | (kappa > 1)):
        raise DomainError("kappa must lie in [0, 1]")
    c = gamma ** 2 / (2 * EIGHT_PI2)
    b = 1 - c
    out = 2 * kappa / (b + np.sqrt(b * b + 4 * c * kappa))
    return float(out) if out.ndim == 0 else out


def laplace_rate(s, gamma):
    """Coefficient ``(gamma s^2 - 2 s beta) / (2 gamma)`` paired with ``Lambda^{-s/gamma}``."""
    return (gamma * s * s - 2 * s * drift(gamma)) / (2 * gamma)


def s_for_kappa(kappa, gamma):
    """The ``s`` in ``[-gamma, 0]`` whose Laplace rate is ``8 pi^2 kappa``."""
    return -gamma * kpz_inverse(kappa, gamma)


# -- regression ---------------------------------------------------------------------


@dataclass(frozen=True)
class ExponentFit:
    slope: float
    stderr: float
    r2: float
    range: tuple
    intercept: float = 0.0
    n: int = 0

    def to_dict(self):
        return {"slope": self.slope, "stderr": self.stderr, "r2": self.r2,
                "range": list(self.range), "intercept": self.intercept, "n": self.n}


def fit_exponent(x, y):
    """Least squares slope of ``y`` against ``x`` with its standard error."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ok = np.isfinite(x) & np.isfinite(y)
    x, y = x[ok], y[ok]
    if x.size < 3 or np.ptp(x) == 0:
        raise StatisticsError(f"need at least 3 distinct abscissae, got {x.size}")
    res = linregress(x, y)
    stderr = float(res.stderr) if np.isfinite(res.stderr) else 0.0
    return ExponentFit(float(res.slope), stderr, float(res.rvalue ** 2),
                       (float(x.min()), float(x.max())), float(res.intercept), int(x.size))


def geometric_ladder(top, decades=3, per_decade=8):
    """Decreasing ladder ``top * 10^{-k / per_decade}``, ``k = 0..decades * per_decade``."""
    k = np.arange(decades * per_decade + 1)
    return float(top) * 10.0 ** (-k / per_decade)


# -- fractal sets -------------------------------------------------------------------


def _cantor_intervals(ratio, depth, start=0.0, length=1.0):
    lo = np.array([0.0])
    size = 1.0
    for _ in range(depth):
        # keep the outer piece of length ratio * size at each end
        lo = np.concatenate([lo, lo + size * (1.0 - ratio)])
        size *= ratio
    lo = np.sort(lo)
    return np.stack([start + length * lo, start + length * (lo + size)], axis=1)


@dataclass(frozen=True)
class FractalSpec:
    """A bounded set in R^4.

    Point, PlanePatch and ProductCantor are products of one-dimensional unions
    of intervals (one list per axis, a point being a degenerate interval); Ball
    is handled on its own.
    """

    kind: str
    params: dict = field(default_factory=dict)
    intervals: tuple = ()

    KINDS = ("Point", "Ball", "PlanePatch", "ProductCantor")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise DomainError(f"unknown fractal kind {self.kind!r}; expected one of {self.KINDS}")

    @classmethod
    def point(cls, center=(0.5,) * 4):
        c = tuple(float(v) for v in center)
        return cls("Point", {"center": c}, tuple(np.array([[v, v]]) for v in c))

    @classmethod
    def ball(cls, center=(0.5,) * 4, radius=0.3):
        if radius <= 0:
            raise DomainError("ball radius must be positive")
        return cls("Ball", {"center": tuple(float(v) for v in center), "radius": float(radius)})

    @classmethod
    def plane_patch(cls, lo=(0.0, 0.0), hi=(1.0, 1.0), fixed=(0.5, 0.5)):
        """``[lo_1, hi_1] x [lo_2, hi_2] x {fixed}``: a square spanning the first two axes."""
        axes = [np.array([[lo[0], hi[0]]]), np.array([[lo[1], hi[1]]]),
                np.array([[fixed[0], fixed[0]]]), np.array([[fixed[1], fixed[1]]])]
        return cls("PlanePatch", {"lo": tuple(lo), "hi": tuple(hi), "fixed": tuple(fixed)},
                   tuple(axes))

    @classmethod
    def product_cantor(cls, ratio=1 / 3, depth=6, axes=4, start=0.0, length=1.0, fixed=0.5):
        """Cantor set of the given ratio on the first ``axes`` axes, a point on the others."""
        if not 0 < ratio < 0.5:
            raise DomainError("Cantor ratio must lie in (0, 1/2)")
        if not 1 <= axes <= 4:
            raise DomainError("axes must be between 1 and 4")
        cant = _cantor_intervals(ratio, depth, start, length)
        parts = [cant] * axes + [np.array([[fixed, fixed]])] * (4 - axes)
        return cls("ProductCantor", {"ratio": ratio, "depth": depth, "axes": axes,
                                     "start": start, "length": length, "fixed": fixed},
                   tuple(parts))

    @property
    def kappa(self):
        """Euclidean exponent; for ProductCantor the value of the infinite-depth set."""
        if self.kind == "Point":
            return 1.0
        if self.kind == "Ball":
            return 0.0
        if self.kind == "PlanePatch":
            return 0.5
        dim = self.params["axes"] * math.log(2) / -math.log(self.params["ratio"])
        return 1.0 - dim / 4.0

    def bounds(self):
        if self.kind == "Ball":
            c, r = np.asarray(self.params["center"]), self.params["radius"]
            return c - r, c + r
        lo = np.array([iv[:, 0].min() for iv in self.intervals])
        hi = np.array([iv[:, 1].max() for iv in self.intervals])
        return lo, hi

    def axis_distance(self, axis, x):
        """Distance from coordinates ``x`` to the axis-``axis`` factor of the set."""
        iv = self.intervals[axis]
        x = np.asarray(x, dtype=float)
        j = np.clip(np.searchsorted(iv[:, 0], x, side="right") - 1, 0, len(iv) - 1)
        left = iv[j]
        d = np.where(x < left[:, 0] if x.ndim else x < left[0], left[..., 0] - x,
                     np.maximum(x - left[..., 1], 0.0))
        nxt = np.minimum(j + 1, len(iv) - 1)
        return np.minimum(d, np.abs(iv[nxt, 0] - x))

    def distance(self, points, period=None):
        """Euclidean distance from each row of ``points`` to the set.

        With ``period`` (per-axis lengths) distances are taken on the torus,
        over the nearest periodic images of the set.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if period is None:
            shifts = [np.zeros(1)] * 4
        else:
            shifts = [np.array([0.0, -p, p]) for p in np.broadcast_to(period, (4,))]
        if self.kind == "Ball":
            c, r = np.asarray(self.params["center"]), self.params["radius"]
            sq = sum(np.min([(pts[:, a] - c[a] + s) ** 2 for s in shifts[a]], axis=0)
                     for a in range(4))
            return np.maximum(np.sqrt(sq) - r, 0.0)
        sq = sum(np.min([self.axis_distance(a, pts[:, a] + s) for s in shifts[a]], axis=0) ** 2
                 for a in range(4))
        return np.sqrt(sq)


def _compress(values):
    v, w = np.unique(values, return_counts=True)
    return v, w.astype(float)


def _pair(a, b):
    (va, wa), (vb, wb) = a, b
    return (va[:, None] + vb[None, :]).ravel(), (wa[:, None] * wb[None, :]).ravel()


def _count_within(axes_sq, limit):
    """Weighted count of 4-tuples whose per-axis squares sum to at most ``limit``."""
    s12, w12 = _pair(axes_sq[0], axes_sq[1])
    s34, w34 = _pair(axes_sq[2], axes_sq[3])
    order = np.argsort(s34)
    s34, cw = s34[order], np.concatenate([[0.0], np.cumsum(w34[order])])
    idx = np.searchsorted(s34, limit - s12, side="right")
    return float(np.sum(w12 * cw[idx]))


def neighbourhood_volume(spec, lam, resolution=32, max_cells=2000):
    """Volume of the ``lam``-neighbourhood by counting grid cells within ``lam`` of the set.

    Each axis gets its own spacing ``max(lam / resolution, extent / max_cells)``;
    per-axis squared distances are compressed to distinct values so that the
    count over the 4-D grid reduces to sorted pair sums.
    """
    lo, hi = spec.bounds()
    axes_sq, vol = [], 1.0
    for a in range(4):
        ext = hi[a] - lo[a] + 2 * lam
        h = max(lam / resolution, ext / max_cells)
        n = int(math.ceil(ext / h)) + 4
        x = lo[a] - lam - 2 * h + (np.arange(n) + 0.5) * h
        if spec.kind == "Ball":
            d = x - spec.params["center"][a]
        else:
            d = spec.axis_distance(a, x)
        axes_sq.append(_compress(d * d))
        vol *= h
    reach = lam + spec.params["radius"] if spec.kind == "Ball" else lam
    return _count_within(axes_sq, reach * reach) * vol


def euclidean_exponent(spec, lambdas, resolution=32):
    """Slope of ``log vol(D_lam)`` against ``log lam^4``."""
    lambdas = np.asarray(lambdas, dtype=float)
    if lambdas.size < 3:
        raise StatisticsError("need at least 3 lambda values")
    lo, hi = spec.bounds()
    diam = float(np.linalg.norm(hi - lo)) or math.inf
    if np.any(lambdas <= 0) or np.any(lambdas >= max(diam, 1.0)):
        raise DomainError("lambda values must lie in (0, diameter of the box)")
    vols = np.array([neighbourhood_volume(spec, lam, resolution) for lam in lambdas])
    return fit_exponent(4 * np.log(lambdas), np.log(vols))


# -- stopping times -----------------------------------------------------------------


@dataclass(frozen=True)
class StoppingRunParams:
    gamma: float = math.pi
    lambda_ladder: tuple = tuple(geometric_ladder(0.1))
    dt: float = 1e-3
    replicas: int = 100_000
    max_time: float = 2.0
    method: str = "bridge"
    refine: int = REFINE_LEVELS

    def __post_init__(self):
        _check_gamma(self.gamma)
        lad = np.asarray(self.lambda_ladder, dtype=float).ravel()
        if lad.size == 0 or np.any((lad <= 0) | (lad >= 1)):
            raise DomainError("every Lambda must lie in (0, 1)")
        if np.any(np.diff(lad) >= 0):
            raise DomainError("the Lambda ladder must be strictly decreasing")
        if not (self.dt > 0 and self.max_time > self.dt):
            raise DomainError("need dt > 0 and max_time > dt")
        if self.method not in ("bridge", "plain"):
            raise DomainError(f"unknown method {self.method!r}")
        if int(self.replicas) < 1:
            raise DomainError("replicas must be positive")
        object.__setattr__(self, "lambda_ladder", tuple(float(v) for v in lad))

    @property
    def beta(self):
        return drift(self.gamma)


@dataclass(frozen=True)
class StoppingSample:
    """First passage times, one column per ladder entry."""

    params: StoppingRunParams
    times: np.ndarray
    censored: np.ndarray
    seed: int

    @property
    def censored_fraction(self):
        return float(self.censored.mean())


def _cross_prob(y0, y1, b, var):
    # probability that a Brownian bridge from y0 to y1 with total variance var
    # dips to level b (both endpoints above b)
    u0, u1 = y0 - b, y1 - b
    with np.errstate(over="ignore", invalid="ignore"):
        p = np.exp(-2.0 * np.maximum(u0, 0) * np.maximum(u1, 0) / var)
    return np.where((u0 <= 0) | (u1 <= 0), 1.0, p)


def _refine(rng, t0, h, y0, y1, b, sigma2, levels):
    """Locate bridge crossings of ``b`` by conditioned bisection; returns crossing times.

    Every interval handed in is known to be crossed. The midpoint is drawn
    from the bridge law conditioned on that event (by rejection against the
    unconditioned bridge), then the earlier crossed half is kept.
    """
    t0, h, y0, y1 = (np.array(a, dtype=float) for a in (t0, h, y0, y1))
    for _ in range(levels):
        n = t0.size
        mid = np.empty(n)
        p1 = np.empty(n)
        pc = np.empty(n)
        todo = np.arange(n)
        for _ in range(_REJECT_CAP):
            if todo.size == 0:
                break
            m = 0.5 * (y0[todo] + y1[todo]) + np.sqrt(0.25 * sigma2 * h[todo]) * rng.standard_normal(todo.size)
            a = _cross_prob(y0[todo], m, b[todo], 0.5 * sigma2 * h[todo])
            c = _cross_prob(m, y1[todo], b[todo], 0.5 * sigma2 * h[todo])
            both = 1.0 - (1.0 - a) * (1.0 - c)
            ok = rng.random(todo.size) < both
            sel = todo[ok]
            mid[sel], p1[sel], pc[sel] = m[ok], a[ok], both[ok]
            todo = todo[~ok]
        if todo.size:
            # practically unreachable; fall back to the unconditioned midpoint
            mid[todo] = 0.5 * (y0[todo] + y1[todo])
            p1[todo] = _cross_prob(y0[todo], mid[todo], b[todo], 0.5 * sigma2 * h[todo])
            pc[todo] = 1.0
        first = rng.random(n) * pc < p1
        h = 0.5 * h
        y1 = np.where(first, mid, y1)
        t0 = np.where(first, t0, t0 + h)
        y0 = np.where(first, y0, mid)
    below = y1 <= b
    frac = np.where(below, (y0 - b) / np.where(below, y0 - y1, 1.0), 0.5)
    return t0 + h * np.clip(frac, 0.0, 1.0)


def _simulate_chunk(params, rng, n):
    levels = np.log(np.asarray(params.lambda_ladder))
    nl = levels.size
    gamma, beta, dt = params.gamma, params.beta, params.dt
    sigma2 = gamma * gamma
    times = np.full((n, nl), params.max_time)
    censored = np.ones((n, nl), dtype=bool)
    nxt = np.zeros(n, dtype=np.int64)
    y = np.zeros(n)
    alive = np.arange(n)
    t = 0.0
    bridge = params.method == "bridge"
    ev_path, ev_level, ev_t, ev_y0, ev_y1 = [], [], [], [], []
    steps = int(math.ceil(params.max_time / dt))
    for step in range(steps):
        if alive.size == 0:
            break
        y0 = y[alive]
        y1 = y0 - beta * dt + gamma * math.sqrt(dt) * rng.standard_normal(alive.size)
        u = rng.random(alive.size) if bridge else None
        k = nxt[alive]
        while True:
            live = k < nl
            b = levels[np.minimum(k, nl - 1)]
            if bridge:
                hit = live & (u < _cross_prob(y0, y1, b, sigma2 * dt))
            else:
                hit = live & (y1 <= b)
            if not hit.any():
                break
            idx = np.nonzero(hit)[0]
            paths = alive[idx]
            lv = k[idx]
            if bridge:
                ev_path.append(paths), ev_level.append(lv)
                ev_t.append(np.full(idx.size, t)), ev_y0.append(y0[idx]), ev_y1.append(y1[idx])
            else:
                frac = (y0[idx] - levels[lv]) / (y0[idx] - y1[idx])
                times[paths, lv] = t + dt * np.clip(frac, 0.0, 1.0)
            censored[paths, lv] = False
            k[idx] += 1
        nxt[alive] = k
        y[alive] = y1
        alive = alive[k < nl]
        t = (step + 1) * dt
    if bridge and ev_path:
        paths, lv = np.concatenate(ev_path), np.concatenate(ev_level)
        t0 = np.concatenate(ev_t)
        tau = _refine(rng, t0, np.full(t0.size, dt), np.concatenate(ev_y0), np.concatenate(ev_y1),
                      levels[lv], sigma2, params.refine)
        times[paths, lv] = tau
    return times, censored


def simulate_stopping_times(params, seed, check=True):
    """First passage of ``gamma X_t - beta t`` below every ``log Lambda`` of the ladder.

    All levels are read off the same path. Replicas are generated in chunks,
    each from its own Philox stream keyed by ``(seed, chunk)``.
    """
    n = int(params.replicas)
    out_t, out_c = [], []
    for c, start in enumerate(range(0, n, CHUNK)):
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed) & (2**64 - 1), c])))
        t, cen = _simulate_chunk(params, rng, min(CHUNK, n - start))
        out_t.append(t), out_c.append(cen)
    sample = StoppingSample(params, np.concatenate(out_t), np.concatenate(out_c), int(seed))
    frac = sample.censored.mean(axis=0)
    if check and np.any(frac > CENSOR_BUDGET):
        raise CensoringError(f"{frac.max():.2%} of paths hit the horizon {params.max_time}; "
                             "raise max_time")
    return sample


def simulate_stopping_time(params, lam, seed):
    """First passage times for a single ``Lambda``."""
    p = StoppingRunParams(params.gamma, (float(lam),), params.dt, params.replicas,
                          params.max_time, params.method, params.refine)
    return simulate_stopping_times(p, seed).times[:, 0]


class MGFRow(NamedTuple):
    lam: float
    s: float
    estimate: float
    stderr: float
    target: float
    zscore: float


def _mean_se(v):
    n = v.shape[0]
    if n < 2:
        raise StatisticsError("at least 2 replicas are needed for a standard error")
    return v.mean(axis=0), v.std(axis=0, ddof=1) / math.sqrt(n)


def _zscore(est, se, target):
    diff = est - target
    return np.where(se > 0, diff / np.where(se > 0, se, 1.0), np.where(diff == 0, 0.0, np.inf))


def mgf_check(params, s_values, seed, sample=None):
    """Monte Carlo Laplace transform of the passage times against ``Lambda^{-s/gamma}``."""
    gamma = params.gamma
    s_values = np.atleast_1d(np.asarray(s_values, dtype=float))
    if np.any((s_values < -gamma - 1e-12) | (s_values > 0)):
        raise DomainError("s must lie in [-gamma, 0]")
    sample = sample or simulate_stopping_times(params, seed)
    lam = np.asarray(params.lambda_ladder)
    rows = []
    for s in s_values:
        est, se = _mean_se(np.exp(-laplace_rate(s, gamma) * sample.times))
        target = lam ** (-s / gamma)
        z = _zscore(est, se, target)
        rows += [MGFRow(float(l), float(s), float(e), float(d), float(t), float(q))
                 for l, e, d, t, q in zip(lam, est, se, target, z)]
    return rows


def quantum_exponent_exact(spec, params, seed, sample=None):
    """Fit ``log E[exp(-8 pi^2 kappa T)]`` against ``log Lambda``; the slope estimates K.

    ``spec`` is a FractalSpec or a bare ``kappa``.
    """
    kappa = spec.kappa if isinstance(spec, FractalSpec) else float(spec)
    if not 0 <= kappa <= 1:
        raise DomainError("kappa must lie in [0, 1]")
    sample = sample or simulate_stopping_times(params, seed)
    est, _ = _mean_se(np.exp(-EIGHT_PI2 * kappa * sample.times))
    return fit_exponent(np.log(params.lambda_ladder), np.log(est))


# -- isothermal neighbourhoods on a grid ----------------------------------------------


class RadiusEstimate(NamedTuple):
    radius: np.ndarray
    capped: np.ndarray


def _grid_of(measure):
    base = measure.base if isinstance(measure, TiltedMeasure) else measure
    return base.grid


def r_lambda(measure, x, lam):
    """Largest cell-centre distance whose closed ball around ``x`` holds mass at most ``lam``.

    Returns radius 0 when the nearest cell already exceeds ``lam``. When ``lam``
    reaches the total mass the radius is capped at the grid diameter and
    flagged. Works on ChaosMeasure and TiltedMeasure alike.
    """
    grid = _grid_of(measure)
    x = np.asarray(x, dtype=float).ravel()
    if x.size != 4:
        raise DomainError("x must be a 4-vector")
    scalar = np.ndim(lam) == 0
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    if np.any(lam <= 0):
        raise DomainError("Lambda must be positive")
    dist = np.linalg.norm(grid.points() - x, axis=1)
    mass = np.asarray(measure.cell_mass).ravel()
    order = np.argsort(dist, kind="stable")
    d, cum = dist[order], np.cumsum(mass[order])
    # closed balls: ties in distance enter together
    last = np.r_[d[1:] != d[:-1], True]
    d, cum = d[last], cum[last]
    j = np.searchsorted(cum, lam, side="right")
    radius = np.where(j > 0, d[np.maximum(j - 1, 0)], 0.0)
    capped = lam >= cum[-1]
    diam = float(np.linalg.norm(np.asarray(grid.spacing) * np.asarray(grid.extent)))
    radius = np.where(capped, diam, radius)
    if scalar:
        return RadiusEstimate(float(radius[0]), bool(capped[0]))
    return RadiusEstimate(radius, capped)


def _offsets(grid, reach, periodic=False):
    h = np.asarray(grid.spacing)
    # on the torus an offset may not reach its own image
    cap = [(n - 1) // 2 if periodic else n - 1 for n in grid.extent]
    span = [int(min(math.ceil(reach / h[a]), cap[a])) for a in range(4)]
    rng = [np.arange(-s, s + 1) for s in span]
    off = np.stack(np.meshgrid(*rng, indexing="ij"), axis=-1).reshape(-1, 4)
    length = np.linalg.norm(off * h, axis=1)
    keep = length <= reach
    off, length = off[keep], length[keep]
    order = np.argsort(length, kind="stable")
    return off[order], length[order], np.array(span)


def threshold_masses(measure, dist, cap, periodic=False):
    """For every cell ``y``, the mass of the ball of radius ``dist[y]`` around it.

    Cells whose centres sit exactly on the bounding sphere count with weight
    one half (the midpoint rule for the ball boundary). Balls are grown shell
    by shell over sorted lattice offsets; a cell stops being tracked once its
    running mass exceeds ``cap`` (reported as ``inf``), since it then belongs to
    no neighbourhood with ``Lambda <= cap``.
    """
    grid = _grid_of(measure)
    mass = np.asarray(measure.cell_mass, dtype=float)
    dist = np.asarray(dist, dtype=float).reshape(grid.extent)
    reach = float(dist.max())
    off, length, span = _offsets(grid, reach, periodic)
    padded = np.pad(mass, [(s, s) for s in span], mode="wrap" if periodic else "constant")
    strides = np.array([int(np.prod(padded.shape[a + 1:])) for a in range(4)])
    flat = padded.ravel()
    base = (np.indices(grid.extent).reshape(4, -1).T + span) @ strides
    shift = off @ strides
    d = dist.ravel()
    out = np.full(d.size, np.inf)
    run = np.zeros(d.size)
    pending = np.arange(d.size)
    start = 0
    while pending.size and start < len(length):
        # all offsets of the current shell share one length
        ell = length[start]
        stop = np.searchsorted(length, ell * (1 + 1e-12), side="right")
        inner = d[pending] < ell * (1 - 1e-9)
        out[pending[inner]] = run[pending[inner]]
        pending = pending[~inner]
        if pending.size == 0:
            break
        shell = np.zeros(pending.size)
        for sh in shift[start:stop]:
            shell += flat[base[pending] + sh]
        on = d[pending] <= ell * (1 + 1e-9)
        out[pending[on]] = run[pending[on]] + 0.5 * shell[on]
        run[pending] += shell
        pending = pending[~on]
        start = stop
        pending = pending[run[pending] <= cap]
    if pending.size:
        # distances beyond every offset: the ball covers what the grid offers
        out[pending] = np.where(run[pending] <= cap, run[pending], np.inf)
    return out.reshape(grid.extent)


def neighbourhood_masses(measure, spec, lambdas, periodic=True):
    """``m(D^Lambda)`` for every ``Lambda``: cells whose own Lambda-ball reaches ``D``.

    By default the box is treated as a torus, both for ball masses and for
    distances to ``D``, so that balls near the faces are not truncated.
    """
    grid = _grid_of(measure)
    lambdas = np.asarray(lambdas, dtype=float)
    period = np.asarray(grid.spacing) * np.asarray(grid.extent) if periodic else None
    dist = spec.distance(grid.points(), period)
    thresh = threshold_masses(measure, dist, float(lambdas.max()), periodic).ravel()
    mass = np.asarray(measure.cell_mass).ravel()
    order = np.argsort(thresh, kind="stable")
    t, cum = thresh[order], np.concatenate([[0.0], np.cumsum(mass[order])])
    return cum[np.searchsorted(t, lambdas, side="right")]


RESOLVE_CELLS = 8.0


def resolvable_range(measures):
    """``(floor, median total mass)`` over a set of measures.

    The floor is ``RESOLVE_CELLS`` times the mean cell mass: below it a
    neighbourhood holds only a handful of cells and the volume is dominated by
    the lattice rather than by the measure.
    """
    cells = np.concatenate([np.asarray(m.cell_mass).ravel() for m in measures])
    totals = np.array([m.total_mass for m in measures])
    return RESOLVE_CELLS * float(np.mean(cells)), float(np.median(totals))


def empirical_ladder(measures, top_fraction=0.1, decades=3.0, per_decade=8):
    """Decreasing ladder from ``top_fraction`` of the median total mass.

    It spans ``decades`` decades unless the resolvable floor cuts it short.
    """
    floor, total = resolvable_range(measures)
    top = top_fraction * total
    if not 0 < top <= 0.5 * total:
        raise RangeError(f"top_fraction {top_fraction} must lie in (0, 0.5]")
    span = min(float(decades), math.log10(top / floor))
    if span <= 0:
        raise RangeError(f"ladder top {top:.3g} lies below the resolvable floor {floor:.3g}")
    n = max(int(math.floor(span * per_decade)), 2)
    return top * 10.0 ** (-span * np.arange(n + 1) / n)


def _as_measures(replicas, params):
    out = []
    for r in replicas:
        if isinstance(r, FieldSample):
            r = density_field(r, r.ladder.depth, params)
        out.append(r)
    return out


@dataclass(frozen=True)
class EmpiricalResult:
    fit: ExponentFit
    lambdas: np.ndarray
    mean_mass: np.ndarray
    stderr: np.ndarray


def quantum_exponent_empirical(spec, replicas, lambdas, params=None):
    """Fit ``log E[m(D^Lambda)]`` against ``log Lambda`` over sampled measures.

    ``replicas`` holds ChaosMeasure objects or FieldSample objects (the latter
    use their deepest level). The ladder must sit between the resolvable floor
    and half the median total mass (see ``resolvable_range``).
    """
    measures = _as_measures(replicas, params)
    if len(measures) < 2:
        raise StatisticsError("need at least 2 replicas")
    lambdas = np.asarray(lambdas, dtype=float)
    cell, total = resolvable_range(measures)
    if lambdas.min() < cell * (1 - 1e-12) or lambdas.max() > 0.5 * total:
        raise RangeError(f"Lambda ladder [{lambdas.min():.3g}, {lambdas.max():.3g}] lies outside "
                         f"the resolvable range [{cell:.3g}, {0.5 * total:.3g}]")
    vals = np.array([neighbourhood_masses(m, spec, lambdas) for m in measures])
    mean, se = _mean_se(vals)
    fit = fit_exponent(np.log(lambdas), np.log(mean))
    return EmpiricalResult(fit, lambdas, mean, se)


# -- conditional mean of the rooted ball mass -------------------------------------------


def _log_k0(x):
    # log-free form for tiny arguments, where only the log term survives
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    tiny = x < 1e-8
    out[tiny] = -np.log(0.5 * x[tiny]) - EULER_GAMMA
    out[~tiny] = bessel_k(0, x[~tiny])
    return out


def _i2_over_dn(u, r):
    """``I_2(u r) / dn(r)`` without forming either factor when ``r`` is tiny."""
    if r < 0.5:
        q = r * r / 4.0
        return u * u * _poly(_B, u * u * q) / _dn_reduced(np.asarray(q))
    return bessel_i(2, u * r) / float(dn(r))


@dataclass(frozen=True)
class ProfilePoint:
    t: float
    radius: float
    log_value: float
    log_star: float

    @property
    def value(self):
        return math.exp(self.log_value)

    @property
    def log_ratio(self):
        return self.log_value - self.log_star

    @property
    def ratio(self):
        return math.exp(self.log_ratio)


def cond_mean_profile(t, R, gamma, Xt, rtol=1e-10):
    """Conditional mean of the rooted mass of ``B_{r(t)}`` given ``X_t``, in log form.

    The radial integral runs over ``u = rho / r(t)``; with ``w = u^{4 - a}``
    the ``u^{3 - a}`` behaviour at the origin is absorbed into the measure.
    Also returns ``log`` of ``exp(gamma X_t - beta t)`` for comparison.
    """
    _check_gamma(gamma)
    if not (t > 0 and R > 0):
        raise DomainError("need t > 0 and R > 0")
    r = g_inverse(t + g_variance(R))
    a = gamma ** 2 / TWO_PI2
    inv_dn_R = 1.0 / float(dn(R))
    scale = 1.0 / (4 * math.pi ** 2 * t)
    p = 4.0 - a

    def log_f(w):
        u = np.asarray(w, dtype=float) ** (1.0 / p)
        rho = u * r
        i0 = np.where(rho < 1e-8, 1.0, bessel_i(0, np.maximum(rho, 1e-300)))
        i2p = scale * (_i2_over_dn(u, r) - bessel_i(2, rho) * inv_dn_R)
        c = i0 - i2p
        # u^{3-a} du = dw / p, and e^{a K0} = (rho)^{-a} e^{a (K0 + log rho)}
        rho = np.maximum(rho, 1e-300)
        return a * (_log_k0(rho) + np.log(rho)) \
            + gamma * Xt * c - 0.5 * gamma ** 2 * t * c * c

    shift = float(max(log_f(1e-12), log_f(0.5), log_f(1.0)))
    val, err = sci_integrate.quad(lambda w: math.exp(float(log_f(w)) - shift), 0.0, 1.0,
                                  epsabs=0.0, epsrel=rtol, limit=200)
    if not (val > 0 and err <= max(rtol, 1e-8) * val * 10):
        raise QuadratureError("conditional mean quadrature did not converge", err / max(val, 1e-300))
    log_value = math.log(TWO_PI2 / p) + (4.0 - a) * math.log(r) + shift + math.log(val)
    return ProfilePoint(float(t), r, log_value, gamma * Xt - drift(gamma) * t)


# -- lower tail of the rooted mass ------------------------------------------------------


@dataclass(frozen=True)
class TailParams:
    delta: float = math.pi ** 2
    rho: float = 0.9
    A_grid: tuple = tuple(np.round(np.linspace(0.05, 1.0, 20), 10))

    def validate(self, gamma):
        g2 = gamma ** 2
        if not 0 < self.delta < 4 * math.pi ** 2 - 2 * g2:
            raise DomainError("need 0 < delta < 4 pi^2 - 2 gamma^2")
        low = (4 * math.pi ** 2 + g2) / (EIGHT_PI2 - g2 - self.delta)
        if not low < self.rho < 1:
            raise DomainError(f"need {low:.4f} < rho < 1")
        A = np.asarray(self.A_grid, dtype=float)
        if A.size < 2 or np.any(A <= 0) or np.any(np.diff(A) <= 0):
            raise DomainError("A_grid must be increasing positive values")

    def bound_rate(self, gamma):
        """Decay rate in ``A`` of the tail bound."""
        g2 = gamma ** 2
        return (2 * self.rho / gamma) * (EIGHT_PI2 - g2 - g2 / self.rho - self.delta)


def unit_tilted_radius(gamma):
    """Radius of the ball of unit volume under ``exp((gamma^2 / 2 pi^2) K_0(|y|)) dy``."""
    _check_gamma(gamma)
    a = gamma ** 2 / TWO_PI2

    def vol(r):
        f = lambda rho: math.exp(a * float(_log_k0(np.array([rho]))[0])) * rho ** 3
        v, _ = sci_integrate.quad(f, 0.0, r, epsabs=0.0, epsrel=1e-12, limit=200)
        return TWO_PI2 * v - 1.0

    return brentq(vol, 1e-3, 2.0, xtol=1e-14, rtol=1e-14)


def tail_grid(gamma, cells=13, margin=1.0):
    """Cube of ``cells`` per axis centred on the origin, just holding the unit tilted ball."""
    r = unit_tilted_radius(gamma)
    side = 2 * r * margin + 2 * r / (cells - 1)
    h = side / cells
    return GridSpec((-0.5 * side,) * 4, (h,) * 4, (cells,) * 4), r


class TailRow(NamedTuple):
    A: float
    count: int
    probability: float
    stderr: float
    log_bound_slope: float
    censored: bool


@dataclass(frozen=True)
class TailResult:
    rows: list
    rate: float
    rate_stderr: float
    bound_rate: float
    masses: np.ndarray
    radius: float

    @property
    def passed(self):
        return self.rate >= self.bound_rate - 2 * self.rate_stderr


def tail_masses(samples, radius, params):
    """Rooted mass of the unit ball around the origin for each sample (deepest level)."""
    out = []
    for s in samples:
        m = density_field(s, s.ladder.depth, params)
        tm = tilt(m, (0.0, 0.0, 0.0, 0.0), params)
        inside = np.linalg.norm(s.grid.points(), axis=1).reshape(s.grid.extent) <= radius
        out.append(float(tm.cell_mass[inside].sum()))
    return np.array(out)


def tail_probability_experiment(tparams, gamma, replicas, seed, ladder=None, cells=13,
                                samples=None):
    """Monte Carlo ``P(m(B) <= e^{-A gamma})`` for the rooted measure, with a decay-rate fit.

    The rate is minus the weighted least squares slope of ``log P`` in ``A``
    over the ``A`` values with nonzero counts (binomial weights). Zero counts
    are marked censored.
    """
    tparams.validate(gamma)
    params = KernelParams(gamma=gamma)
    grid, radius = tail_grid(gamma, cells)
    if samples is None:
        ladder = ladder or ScaleLadder(0.5, 5)
        sampler = CirculantSampler(grid, ladder, params)
        samples = [sampler.sample(seed, r) for r in range(int(replicas))]
    masses = tail_masses(samples, radius, params)
    n = masses.size
    if n < 2:
        raise StatisticsError("need at least 2 replicas")
    A = np.asarray(tparams.A_grid, dtype=float)
    counts = np.array([(masses <= math.exp(-a * gamma)).sum() for a in A])
    prob = counts / n
    se = np.sqrt(prob * (1 - prob) / n)
    bound = tparams.bound_rate(gamma)
    rows = [TailRow(float(a), int(c), float(p), float(e), -bound, bool(c == 0))
            for a, c, p, e in zip(A, counts, prob, se)]
    ok = counts > 0
    if ok.sum() >= 2:
        x, y = A[ok], np.log(prob[ok])
        # var(log p) ~ (1 - p) / (n p)
        w = counts[ok] / (1 - prob[ok] + 1.0 / n)
        X = np.stack([np.ones_like(x), x], axis=1)
        cov = np.linalg.inv(X.T @ (w[:, None] * X))
        coef = cov @ (X.T @ (w * y))
        rate, rate_se = -float(coef[1]), float(math.sqrt(cov[1, 1]))
    else:
        rate, rate_se = math.inf, 0.0
    return TailResult(rows, rate, rate_se, bound, masses, radius)
