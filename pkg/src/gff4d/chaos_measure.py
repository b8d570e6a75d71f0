"""Discretised multiplicative chaos measures built from field samples.

On a cell-centred grid the level-``n`` measure puts mass

    exp(gamma X_n(x) - gamma^2 G(eps_n) / 2) * cell volume

on the cell around ``x`` (midpoint rule). The deepest level of a ladder stands
in for the limit measure, which is never formed.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import struct
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.interpolate import CubicSpline

from .errors import DensityOverflowError, DomainError, StatisticsError
from .field_sampler import GridSpec, ScaleLadder
from .kernels import TWO_PI2, KernelParams, cov_scalar_array, g_variance
from .special_functions import bessel_k

log = logging.getLogger(__name__)

EXP_LIMIT = 700.0
MIN_REPLICAS = 100
MIN_DEPTH = 3
ORACLE_RTOL = 1e-4
_MAGIC = b"GFF4M\x01"


@dataclass(frozen=True)
class ChaosMeasure:
    """Cell masses of the level-``level`` measure (``level`` counts from 1)."""

    grid: GridSpec
    level: int
    eps: float
    cell_mass: np.ndarray
    gamma: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        mass = np.asarray(self.cell_mass, dtype=float)
        if mass.shape != self.grid.extent:
            raise DomainError(f"cell_mass shape {mass.shape} does not match {self.grid.extent}")
        if not (np.all(np.isfinite(mass)) and np.all(mass >= 0)):
            raise DomainError("cell masses must be finite and non-negative")
        mass.setflags(write=False)
        object.__setattr__(self, "cell_mass", mass)

    @property
    def total_mass(self):
        return float(self.cell_mass.sum())

    def mass_in(self, lo, hi):
        """Mass of the cells whose centers lie in the box ``[lo, hi)``."""
        return float(self.cell_mass[box_mask(self.grid, lo, hi)].sum())

    def to_csv(self, handle=None):
        """Rows ``i1..i4, x1..x4, mass``; returns the text when no handle is given."""
        own = handle is None
        handle = io.StringIO() if own else handle
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["i1", "i2", "i3", "i4", "x1", "x2", "x3", "x4", "mass"])
        idx = np.indices(self.grid.extent).reshape(4, -1).T
        for i, x, m in zip(idx, self.grid.points(), self.cell_mass.ravel()):
            writer.writerow([*map(int, i), *(repr(float(v)) for v in x), repr(float(m))])
        return handle.getvalue() if own else None

    def to_bytes(self):
        head = {"grid": self.grid.to_dict(), "level": self.level, "eps": self.eps,
                "gamma": self.gamma, "meta": self.meta}
        head = json.dumps(head, sort_keys=True).encode()
        body = np.ascontiguousarray(self.cell_mass, dtype="<f8").tobytes()
        return _MAGIC + struct.pack("<Q", len(head)) + head + body

    @classmethod
    def from_bytes(cls, blob):
        if blob[: len(_MAGIC)] != _MAGIC:
            raise DomainError("not a chaos measure container")
        pos = len(_MAGIC)
        (n,) = struct.unpack("<Q", blob[pos:pos + 8])
        head = json.loads(blob[pos + 8:pos + 8 + n].decode())
        grid = GridSpec(**{k: tuple(v) for k, v in head["grid"].items()})
        mass = np.frombuffer(blob[pos + 8 + n:], dtype="<f8").reshape(grid.extent)
        return cls(grid, head["level"], head["eps"], mass.copy(), head["gamma"], head["meta"])


@dataclass(frozen=True)
class TiltedMeasure:
    base: ChaosMeasure
    root: tuple
    cell_mass: np.ndarray
    multiplier: np.ndarray
    root_cell: tuple

    @property
    def total_mass(self):
        return float(self.cell_mass.sum())


def box_mask(grid, lo, hi):
    pts = grid.points()
    lo = np.broadcast_to(np.asarray(lo, dtype=float), (4,))
    hi = np.broadcast_to(np.asarray(hi, dtype=float), (4,))
    inside = np.all((pts >= lo) & (pts < hi), axis=1)
    return inside.reshape(grid.extent)


def is_resolved(grid, eps):
    """Midpoint rule resolves scale ``eps`` when every spacing is at most ``eps / 2``."""
    return max(grid.spacing) <= 0.5 * eps * (1 + 1e-12)


def _log_density(values, eps, gamma):
    expo = gamma * np.asarray(values) - 0.5 * gamma ** 2 * float(g_variance(eps))
    peak = float(np.max(expo)) if np.size(expo) else 0.0
    if peak > EXP_LIMIT:
        raise DensityOverflowError(
            f"exponent {peak:.1f} overflows; gamma or the grid is misconfigured")
    return expo


def density_field(sample, level, params=None):
    """Chaos measure of ``sample`` at ladder level ``level`` (1-based)."""
    params = params or sample.params
    if not 1 <= level <= sample.ladder.depth:
        raise DomainError(f"level {level} outside 1..{sample.ladder.depth}")
    eps = float(sample.ladder.levels[level - 1])
    expo = _log_density(sample.values[level - 1], eps, params.gamma)
    mass = np.exp(expo) * sample.grid.cell_volume
    resolved = is_resolved(sample.grid, eps)
    if not resolved:
        log.debug("spacing %s does not resolve eps = %g", sample.grid.spacing, eps)
    meta = {"resolved": resolved, "seed": int(sample.seed), "replica": int(sample.replica),
            "backend": sample.backend, "truncation_level": sample.ladder.depth}
    return ChaosMeasure(sample.grid, int(level), eps, mass, float(params.gamma), meta)


def integrate(measure, f):
    """``sum f(center) * mass``; ``f`` is a callable on ``(N, 4)`` centers or an array."""
    if callable(f):
        vals = np.asarray(f(measure.grid.points()), dtype=float).reshape(measure.grid.extent)
    else:
        vals = np.broadcast_to(np.asarray(f, dtype=float), measure.grid.extent)
    if not np.all(np.isfinite(vals)):
        raise DomainError("test function is not finite on the grid")
    return float((vals * measure.cell_mass).sum())


# -- replica statistics ---------------------------------------------------------


def _stack(replicas):
    if not replicas:
        raise StatisticsError("no replicas supplied")
    first = replicas[0]
    values = np.stack([r.values for r in replicas])
    return values, first.grid, first.ladder, first.params


def level_masses(values, grid, ladder, gamma, box=None, weights=None):
    """Total mass per replica and level over ``box`` (default: the whole grid).

    ``values`` has shape ``(replicas, depth, *extent)``; returns ``(replicas, depth)``.
    With ``weights`` (cell values of a test function) this is ``M_n(f)`` instead.
    """
    values = np.asarray(values, dtype=float)
    mask = np.ones(grid.extent, bool) if box is None else box_mask(grid, *box)
    flat = values.reshape(values.shape[:2] + (-1,))[..., mask.ravel()]
    w = 1.0 if weights is None else np.asarray(weights, float).reshape(-1)[mask.ravel()]
    out = np.empty(values.shape[:2])
    for n, eps in enumerate(ladder.levels):
        expo = _log_density(flat[:, n], eps, gamma)
        out[:, n] = (np.exp(expo) * w).sum(axis=1) * grid.cell_volume
    return out


@dataclass(frozen=True)
class DecayStats:
    levels: np.ndarray
    second_moment: np.ndarray
    stderr: np.ndarray
    rate: float
    bound_rate: float
    differences: np.ndarray

    def bootstrap_monotone_fraction(self, n_boot=1000, seed=0):
        """Share of bootstrap resamples whose second moments strictly decrease."""
        rng = np.random.default_rng(seed)
        sq = self.differences ** 2
        n = sq.shape[0]
        hits = 0
        for _ in range(n_boot):
            m2 = sq[rng.integers(0, n, n)].mean(axis=0)
            hits += bool(np.all(np.diff(m2) < 0))
        return hits / n_boot


def cauchy_decay_stats(replicas, params=None, box=None, grid=None, ladder=None):
    """Second moments of ``m_{n+1}(box) - m_n(box)`` with a fitted decay rate.

    ``replicas`` is a list of FieldSample or an array ``(count, depth, *extent)``
    together with ``grid`` and ``ladder``. The rate is minus the slope of
    ``log E[diff^2]`` against ``G(eps_n)``; the bound predicts ``8 pi^2 - gamma^2``.
    """
    if isinstance(replicas, np.ndarray):
        values = replicas
        if grid is None or ladder is None:
            raise DomainError("grid and ladder are required with an array of replicas")
    else:
        values, grid, ladder, p0 = _stack(list(replicas))
        params = params or p0
    params = params or KernelParams()
    if values.shape[0] < MIN_REPLICAS:
        raise StatisticsError(f"need at least {MIN_REPLICAS} replicas, got {values.shape[0]}")
    if ladder.depth < MIN_DEPTH:
        raise StatisticsError(f"need a ladder of depth at least {MIN_DEPTH}")
    masses = level_masses(values, grid, ladder, params.gamma, box)
    diff = np.diff(masses, axis=1)
    sq = diff ** 2
    m2 = sq.mean(axis=0)
    se = sq.std(axis=0, ddof=1) / math.sqrt(sq.shape[0])
    g = g_variance(ladder.levels[:-1])
    rate = math.nan
    if np.all(m2 > 0):
        rate = -float(np.polyfit(g, np.log(m2), 1)[0])
    return DecayStats(np.arange(1, ladder.depth), m2, se, rate,
                      8 * math.pi ** 2 - params.gamma ** 2, diff)


def variation_series(sample, params=None, box=None):
    """Partial sums of ``m_1(box) + sum_n |m_{n+1} - m_n|(box)`` (a diagnostic only)."""
    params = params or sample.params
    mask = np.ones(sample.grid.extent, bool) if box is None else box_mask(sample.grid, *box)
    dens = [np.exp(_log_density(sample.values[n][mask], e, params.gamma)) * sample.grid.cell_volume
            for n, e in enumerate(sample.ladder.levels)]
    terms = [dens[0].sum()] + [np.abs(b - a).sum() for a, b in zip(dens, dens[1:])]
    return np.cumsum(terms)


def level_functionals(sample, f, params=None):
    """``M_n(f)`` for every level of one coupled sample."""
    return np.array([integrate(density_field(sample, n, params), f)
                     for n in range(1, sample.ladder.depth + 1)])


# -- second moment oracle --------------------------------------------------------


def _graded_rule(length, nodes=12, panels=5):
    # geometric panels toward 0, where |u| has its kink
    edges = np.concatenate([[0.0], length * 4.0 ** -np.arange(panels - 1, -1, -1)])
    x, w = leggauss(nodes)
    half = 0.5 * np.diff(edges)
    pts = (edges[:-1, None] + half[:, None] * (x + 1)).ravel()
    return pts, (half[:, None] * w).ravel()


def _radial_profile(eps, gamma, r_max, n=401):
    """Spline of ``exp(gamma^2 C(eps, eps, r))`` on ``[0, r_max]`` with a knot at ``2 eps``."""
    knots = np.linspace(0.0, r_max, n)
    if 0 < 2 * eps < r_max:
        knots = np.union1d(knots, [2 * eps])
    vals = np.exp(gamma ** 2 * cov_scalar_array(eps, eps, knots))
    # piecewise splines so the regime change at 2 eps is not smoothed over
    cut = 2 * eps
    lo = knots <= cut
    parts = []
    if lo.sum() >= 4:
        parts.append((cut, CubicSpline(knots[lo], vals[lo])))
    hi = knots >= cut
    if hi.sum() >= 4:
        parts.append((math.inf, CubicSpline(knots[hi], vals[hi])))

    def profile(r):
        r = np.asarray(r, dtype=float)
        out = np.empty_like(r)
        prev = -math.inf
        for edge, spl in parts:
            sel = (r > prev) & (r <= edge) if prev > -math.inf else r <= edge
            out[sel] = spl(r[sel])
            prev = edge
        return out

    return profile


def second_moment_oracle(box, level, params=None, ladder=None, nodes=12):
    """``E[m_n(box)^2] = int int exp(gamma^2 C(|x - y|)) dx dy`` by quadrature.

    The double integral over the box is reduced to the difference variable,
    ``int_{[-L, L]^4} prod_a (L_a - |u_a|) exp(gamma^2 C(|u|)) du``, and
    evaluated with graded tensor Gauss-Legendre on one orthant.
    """
    params = params or KernelParams()
    ladder = ladder or ScaleLadder(params.epsilon0, max(level, 1))
    lo, hi = (np.broadcast_to(np.asarray(v, dtype=float), (4,)) for v in box)
    side = hi - lo
    if np.any(side <= 0):
        raise DomainError("box must have positive side lengths")
    if not 1 <= level <= ladder.depth:
        raise DomainError(f"level {level} outside 1..{ladder.depth}")
    eps = float(ladder.levels[level - 1])
    vol = float(np.prod(side))
    if params.gamma == 0:
        return vol ** 2
    profile = _radial_profile(eps, params.gamma, float(np.linalg.norm(side)) * 1.0001)
    rules = [_graded_rule(L, nodes) for L in side]
    u = np.meshgrid(*[r[0] for r in rules], indexing="ij")
    w = np.ones(u[0].shape)
    for ax, (x, wt) in enumerate(rules):
        shape = [1, 1, 1, 1]
        shape[ax] = -1
        w = w * (wt * (side[ax] - x)).reshape(shape)
    r = np.sqrt(sum(c * c for c in u))
    return 16.0 * float(np.sum(w * profile(r)))


# -- tilting ---------------------------------------------------------------------


def _cell_average_multiplier(a, offsets_lo, offsets_hi, nodes=12):
    """Average of ``exp(a K_0(|y|))`` over the box ``[lo, hi]`` containing the origin.

    The box splits into orthant boxes with a corner at the origin, and each of
    those into four pyramids with apex at the origin, one per far face. On the
    pyramid over face ``a`` put ``y_a = l_a s``, ``y_b = l_b s v_b``; then

        int f(|y|) dy = prod(l) int_{[0,1]^3} Q(q(v)) dv,
        Q(rho) = int_0^1 f(rho t) t^3 dt,  q(v) = |(l_a, l_b v_b)|,

    and ``Q`` is smooth in ``log rho``, so a tensor rule in ``v`` suffices.
    """
    lengths = np.stack([-np.asarray(offsets_lo, float), np.asarray(offsets_hi, float)])
    r_max = float(np.linalg.norm(np.max(lengths, axis=0))) * 1.001
    r_min = max(float(lengths[lengths > 0].min()) * 0.999, r_max * 1e-12)
    rho = np.geomspace(r_min, r_max, 200)
    t, tw = _graded_rule(1.0, 16, 8)
    rr = rho[:, None] * t[None, :]
    f = np.exp(a * bessel_k(0, rr.ravel()).reshape(rr.shape))
    spline = CubicSpline(np.log(rho), (f * t ** 3 * tw).sum(axis=1))
    v, vw = leggauss(nodes)
    v, vw = 0.5 * (v + 1), 0.5 * vw
    grid_v = np.meshgrid(v, v, v, indexing="ij")
    wv = vw[:, None, None] * vw[None, :, None] * vw[None, None, :]
    total = 0.0
    for signs in np.ndindex(2, 2, 2, 2):
        ell = np.array([lengths[s, ax] for ax, s in enumerate(signs)])
        if np.any(ell <= 0):
            continue
        for face in range(4):
            others = [b for b in range(4) if b != face]
            q2 = ell[face] ** 2 + sum((ell[b] * g) ** 2 for b, g in zip(others, grid_v))
            total += float(np.prod(ell)) * float(np.sum(wv * spline(0.5 * np.log(q2))))
    return total / float(np.prod(lengths.sum(axis=0)))


def tilt(measure, root, params=None):
    """Reweight by ``exp((gamma^2 / 2 pi^2) K_0(|root - center|))``.

    The cell containing the root uses the cell average of the multiplier,
    which is finite since the singularity ``r^{-gamma^2/2pi^2}`` is integrable.
    """
    gamma = measure.gamma if params is None else params.gamma
    a = gamma ** 2 / TWO_PI2
    grid = measure.grid
    root = np.asarray(root, dtype=float).ravel()
    spacing = np.asarray(grid.spacing)
    idx = np.floor((root - np.asarray(grid.origin)) / spacing).astype(int)
    if root.size != 4 or np.any(idx < 0) or np.any(idx >= np.asarray(grid.extent)):
        raise DomainError("root must lie inside the grid")
    dist = np.linalg.norm(grid.points() - root, axis=1).reshape(grid.extent)
    mult = np.ones(grid.extent)
    if a > 0:
        away = dist > 0
        mult[away] = np.exp(a * bessel_k(0, dist[away]))
        center = np.asarray(grid.origin) + (idx + 0.5) * spacing
        off = center - root
        mult[tuple(idx)] = _cell_average_multiplier(a, off - 0.5 * spacing, off + 0.5 * spacing)
    mult.setflags(write=False)
    mass = measure.cell_mass * mult
    return TiltedMeasure(measure, tuple(root), mass, mult, tuple(int(i) for i in idx))
