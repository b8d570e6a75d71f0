"""Joint Gaussian sampling of the mu-contracted field over a scale ladder.

Two backends share one target law, ``Cov = cov_scalar`` between every pair of
(level, grid point):

``Dense``
    Cholesky of the full Gram matrix, capped at ``DENSE_CAP`` rows.

``Circulant``
    The covariance is split in frequency, ``C = C_low + C_high`` with weight
    ``phi(s) = e^{-s}(1 + s)``, ``s = (1 + k^2)/omega^2`` on the low side.
    ``1 - phi`` vanishes to second order at ``k = +-i``, so ``C_high`` has an
    entire spectrum and decays faster than any exponential. It is embedded on
    a periodic torus (periodised, hence positive semi-definite up to rounding)
    and synthesised level-jointly with FFTs. ``C_low`` carries the slowly
    decaying ``K_0`` tail. It is smooth, so its Gram matrix on the grid is
    numerically low rank and is factored by pivoted Cholesky. The two draws
    are independent and add up to the target covariance.

Seeds: replica ``r`` of the dense backend draws from
``Philox(SeedSequence([seed, r]))``. The circulant backend synthesises two
replicas per complex FFT, so replicas ``2j`` and ``2j + 1`` share the
generator ``Philox(SeedSequence([seed, j]))`` and take the real and the
imaginary parts.
"""

from __future__ import annotations

import functools
import json
import logging
import math
import struct
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import linalg
from scipy.linalg import lapack

from .errors import (
    CapacityError,
    DomainError,
    EmbeddingError,
    IllConditionedCovarianceError,
)
from .kernels import KernelParams, PointScale, cov_scalar_array, g_inverse, g_variance, spectral_amplitude
from .special_functions import bessel_j

log = logging.getLogger(__name__)

DENSE_CAP = 4096
JITTER_REL = 1e-8
JITTER_STEPS = 3
NEG_MASS_TOL = 1e-6
EMBED_RETRIES = 2
# bound on |implied - target| covariance tolerated from periodisation and truncation
COVARIANCE_TOL = 1e-5
LOWRANK_TOL = 1e-7
LOWRANK_BYTES = 2 * 1024 ** 3
TORUS_CAP = 2 ** 22
_MAGIC = b"GFF4D\x01"


# -- value types -----------------------------------------------------------------


@dataclass(frozen=True)
class ScaleLadder:
    eps0: float = 0.5
    depth: int = 5

    def __post_init__(self):
        if not 0.0 < self.eps0 < 1.0:
            raise DomainError(f"eps0 must lie in (0, 1), got {self.eps0}")
        if int(self.depth) != self.depth or self.depth < 1:
            raise DomainError(f"depth must be a positive integer, got {self.depth}")
        object.__setattr__(self, "depth", int(self.depth))
        if not self.eps0 ** self.depth > 0:
            raise DomainError("finest level underflows to zero")

    @property
    def levels(self):
        return self.eps0 ** np.arange(1, self.depth + 1, dtype=float)


@dataclass(frozen=True)
class GridSpec:
    """Cell-centred 4-D grid: point ``i`` sits at ``origin + (i + 1/2) spacing``."""

    origin: tuple = (0.0, 0.0, 0.0, 0.0)
    spacing: tuple = (1 / 12,) * 4
    extent: tuple = (12,) * 4

    def __post_init__(self):
        origin = tuple(float(v) for v in self.origin)
        spacing = tuple(float(v) for v in np.broadcast_to(np.asarray(self.spacing, float), (4,)))
        extent = tuple(int(v) for v in np.broadcast_to(np.asarray(self.extent), (4,)))
        if len(origin) != 4 or not all(math.isfinite(v) for v in origin):
            raise DomainError("origin must be 4 finite coordinates")
        if not all(h > 0 and math.isfinite(h) for h in spacing):
            raise DomainError("spacing must be positive")
        if not all(n >= 1 for n in extent):
            raise DomainError("extent must be positive")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "extent", extent)

    @classmethod
    def box(cls, n, side=1.0, origin=(0.0, 0.0, 0.0, 0.0)):
        """``n`` cells per axis over a cube of the given side (``n`` may be a 4-tuple)."""
        n = tuple(int(v) for v in np.broadcast_to(np.asarray(n), (4,)))
        return cls(origin, tuple(side / v for v in n), n)

    @property
    def size(self):
        return int(np.prod(self.extent))

    @property
    def cell_volume(self):
        return float(np.prod(self.spacing))

    def points(self):
        idx = np.indices(self.extent).reshape(4, -1).T
        return np.asarray(self.origin) + (idx + 0.5) * np.asarray(self.spacing)

    def to_dict(self):
        return {"origin": list(self.origin), "spacing": list(self.spacing), "extent": list(self.extent)}


@dataclass(frozen=True)
class FieldSample:
    """One joint draw; ``values[n]`` is level ``n`` on the grid (shape ``extent``)."""

    grid: GridSpec
    ladder: ScaleLadder
    values: np.ndarray
    seed: int
    backend: str
    replica: int = 0
    params: KernelParams = field(default_factory=KernelParams)
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        want = (self.ladder.depth,) + self.grid.extent
        if vals.shape != want:
            raise DomainError(f"values shape {vals.shape} does not match {want}")
        if not np.all(np.isfinite(vals)):
            raise DomainError("sample contains non-finite values")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def header(self):
        return {
            "grid": self.grid.to_dict(),
            "ladder": {"eps0": self.ladder.eps0, "depth": self.ladder.depth},
            "params": {"gamma": self.params.gamma, "epsilon0": self.params.epsilon0, "R": self.params.R},
            "seed": int(self.seed),
            "replica": int(self.replica),
            "backend": self.backend,
            "provenance": self.provenance,
        }

    def to_bytes(self):
        head = json.dumps(self.header(), sort_keys=True).encode()
        body = np.ascontiguousarray(self.values, dtype="<f8").tobytes()
        return _MAGIC + struct.pack("<Q", len(head)) + head + body

    @classmethod
    def from_bytes(cls, blob):
        if blob[: len(_MAGIC)] != _MAGIC:
            raise DomainError("not a field sample container")
        pos = len(_MAGIC)
        (n,) = struct.unpack("<Q", blob[pos:pos + 8])
        head = json.loads(blob[pos + 8:pos + 8 + n].decode())
        grid = GridSpec(**{k: tuple(v) for k, v in head["grid"].items()})
        ladder = ScaleLadder(**head["ladder"])
        vals = np.frombuffer(blob[pos + 8 + n:], dtype="<f8").astype(float)
        vals = vals.reshape((ladder.depth,) + grid.extent)
        return cls(grid, ladder, vals, head["seed"], head["backend"], head["replica"],
                   KernelParams(**head["params"]), head["provenance"])

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


@dataclass(frozen=True)
class RadialPath:
    x: tuple
    R: float
    times: np.ndarray
    values: np.ndarray
    radii: np.ndarray


def replica_generator(seed, index):
    """Deterministic generator for ``(seed, index)``."""
    ss = np.random.SeedSequence([int(seed) & (2 ** 64 - 1), int(index)])
    return np.random.Generator(np.random.Philox(ss))


# -- dense backend ----------------------------------------------------------------


def _pairwise_distance(xs):
    diff = xs[:, None, :] - xs[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def build_covariance(points, params=None, max_points=DENSE_CAP):
    """Gram matrix of ``cov_scalar`` over a list of ``PointScale``."""
    points = list(points)
    if len(points) > max_points:
        raise CapacityError(f"{len(points)} points exceed the dense cap of {max_points}")
    if not points:
        return np.zeros((0, 0))
    xs = np.array([p.x for p in points])
    eps = np.array([p.eps for p in points])
    cov = cov_scalar_array(eps[:, None], eps[None, :], _pairwise_distance(xs))
    return 0.5 * (cov + cov.T)


def factor_dense(cov):
    """Lower Cholesky factor with the jitter policy; returns ``(L, jitter)``."""
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise DomainError("covariance must be square")
    if cov.shape[0] > DENSE_CAP:
        raise CapacityError(f"{cov.shape[0]} rows exceed the dense cap of {DENSE_CAP}")
    if not np.allclose(cov, cov.T, rtol=0, atol=1e-12 * max(1.0, np.abs(cov).max(initial=0))):
        raise DomainError("covariance must be symmetric")
    n = cov.shape[0]
    base = JITTER_REL * np.trace(cov) / max(n, 1)
    try:
        return linalg.cholesky(cov, lower=True), 0.0
    except linalg.LinAlgError:
        pass
    # exactly singular but PSD matrices (repeated points) factor without jitter
    semi = _semidefinite_factor(cov, base)
    if semi is not None:
        return semi, 0.0
    for step in range(JITTER_STEPS):
        jitter = base * 10.0 ** step
        log.info("Cholesky failed, retrying with jitter %.3e", jitter)
        try:
            return linalg.cholesky(cov + jitter * np.eye(n), lower=True), jitter
        except linalg.LinAlgError:
            continue
    lam = np.linalg.eigvalsh(cov)
    raise IllConditionedCovarianceError(
        f"Cholesky failed with jitter up to {jitter:.3e}; smallest eigenvalues {lam[:3]}", lam)


def _semidefinite_factor(cov, tol):
    """Rank-revealing Cholesky ``P L L^T P^T``; None unless it reproduces ``cov`` to ``tol``."""
    c, piv, rank, info = lapack.dpstrf(cov, lower=1, tol=tol)
    if info < 0:
        return None
    low = np.tril(c)
    low[:, rank:] = 0.0
    out = np.zeros_like(low)
    out[piv - 1] = low
    if np.abs(out @ out.T - cov).max() > tol:
        return None
    return out


def sample_dense(cov, seed, size=None):
    """Draw(s) from ``N(0, cov)``; ``size`` adds a leading replica axis."""
    chol, _ = factor_dense(cov)
    rng = replica_generator(seed, 0)
    n = chol.shape[0]
    z = rng.standard_normal(n if size is None else (size, n))
    return z @ chol.T


def _ladder_points(grid, ladder):
    xs = grid.points()
    return [PointScale(x, e) for e in ladder.levels for x in xs]


@functools.lru_cache(maxsize=8)
def _dense_factor(grid, ladder):
    cov = build_covariance(_ladder_points(grid, ladder))
    return factor_dense(cov)


def sample_dense_field(grid, ladder, params=None, seed=0, replica=0):
    params = params or KernelParams()
    chol, jitter = _dense_factor(grid, ladder)
    z = replica_generator(seed, replica).standard_normal(chol.shape[0])
    vals = (chol @ z).reshape((ladder.depth,) + grid.extent)
    prov = {"jitter": jitter, "jitter_rel": JITTER_REL}
    return FieldSample(grid, ladder, vals, seed, "Dense", replica, params, prov)


# -- band split -------------------------------------------------------------------

_GL24 = leggauss(24)


def _band_nodes(omega, d_max):
    # phi is below 1e-15 relative beyond k = 6.5 omega
    k_max = 6.5 * omega
    width = min(1.0, math.pi / (d_max + 1.0))
    n = max(4, math.ceil(k_max / width))
    edges = np.linspace(0.0, k_max, n + 1)
    x, w = _GL24
    half = 0.5 * np.diff(edges)
    k = (edges[:-1, None] + half[:, None] * (x + 1.0)).ravel()
    return k, (half[:, None] * w).ravel()


def low_band_weight(k, omega):
    s = (1.0 + k * k) / omega ** 2
    return np.exp(-s) * (1.0 + s)


def low_band_covariance(levels, dist, omega):
    """``C_low`` for every pair of levels at each distance.

    Returns an array of shape ``(depth, depth, len(dist))``.
    """
    levels = np.asarray(levels, dtype=float)
    dist = np.asarray(dist, dtype=float)
    k, w = _band_nodes(omega, float(dist.max(initial=0.0)))
    amp = np.array([spectral_amplitude(e, k) for e in levels])
    base = low_band_weight(k, omega) / (1.0 + k * k) ** 2 * w
    kern = np.empty((dist.size, k.size))
    zero = dist == 0
    kern[zero] = k ** 3 / (2.0 * math.pi ** 2)
    pos = ~zero
    if pos.any():
        dd = dist[pos][:, None]
        kern[pos] = k ** 2 * bessel_j(1, k * dd) / (math.pi ** 2 * dd)
    weighted = amp[:, None, :] * amp[None, :, :] * base
    return np.einsum("abk,dk->abd", weighted, kern)


def _pair_table(levels, dist, omega, part):
    """Target covariance restricted to one band, shape ``(depth, depth, n)``."""
    low = low_band_covariance(levels, dist, omega)
    if part == "low":
        return low
    full = cov_scalar_array(levels[:, None, None], levels[None, :, None], dist[None, None, :])
    return full - low


# -- circulant backend ------------------------------------------------------------


def _torus_sizes(extent, factor):
    out = []
    for n in extent:
        if n == 1:
            out.append(1)
        else:
            out.append(int(2 ** math.ceil(math.log2(2 * n))) * factor)
    return tuple(out)


def _fold_matrix(m):
    # cosine transform on the folded index u = 0..m/2 with image multiplicities
    h = m // 2 + 1
    u = np.arange(h)
    mult = np.where((u == 0) | (2 * u == m), 1.0, 2.0)
    return np.cos(2.0 * math.pi * np.outer(u, u) / m) * mult[None, :], mult


class CirculantSampler:
    """Reusable factorisation for one (grid, ladder) pair.

    Parameters
    ----------
    grid, ladder : GridSpec, ScaleLadder
    params : KernelParams, optional
    omega : float, optional
        Split frequency. By default chosen from the wrap-around distance of
        the torus so that the high band is below ~1e-6 there.
    """

    def __init__(self, grid, ladder, params=None, omega=None):
        self.grid = grid
        self.ladder = ladder
        self.params = params or KernelParams()
        self.levels = ladder.levels
        last = None
        for attempt in range(EMBED_RETRIES + 1):
            try:
                self._embed(2 ** attempt, omega)
                break
            except EmbeddingError as exc:
                last = exc
                log.info("embedding attempt %d rejected: %s", attempt, exc)
        else:
            raise EmbeddingError(f"{last}; use the dense backend for this configuration")
        self._factor_low()

    # high band on the torus

    def _embed(self, factor, omega):
        grid = self.grid
        sizes = _torus_sizes(grid.extent, factor)
        if np.prod(sizes) * self.ladder.depth ** 2 > TORUS_CAP * 25:
            raise CapacityError(f"torus {sizes} is too large for depth {self.ladder.depth}")
        periodic = [m > 1 for m in sizes]
        wrap = min((m - n + 1) * h for m, n, h, p in zip(sizes, grid.extent, grid.spacing, periodic) if p) \
            if any(periodic) else math.inf
        if omega is None:
            omega = min(8.0, max(1.5, 5.25 / wrap)) if math.isfinite(wrap) else 1.5
        cutoff = 10.5 / omega
        depth = self.ladder.depth
        halves = [m // 2 + 1 for m in sizes]

        # squared distances of every image within the cutoff, per folded index
        axes = []
        for m, h, hf in zip(sizes, grid.spacing, halves):
            u = np.arange(hf)
            if m == 1:
                axes.append([(u * h) ** 2])
                continue
            reach = int(math.ceil(cutoff / (m * h))) + 1
            axes.append([((u + j * m) * h) ** 2 for j in range(-reach, reach + 1)])
        keys, where = [], []
        shape = tuple(halves)
        for combo in np.ndindex(*[len(a) for a in axes]):
            sq = axes[0][combo[0]][:, None, None, None] + axes[1][combo[1]][None, :, None, None] \
                + axes[2][combo[2]][None, None, :, None] + axes[3][combo[3]][None, None, None, :]
            sq = np.broadcast_to(sq, shape).ravel()
            keep = np.nonzero(sq < cutoff ** 2)[0]
            keys.append(sq[keep])
            where.append(keep)
        keys = np.concatenate(keys)
        where = np.concatenate(where)
        uniq, inv = np.unique(np.round(keys, 12), return_inverse=True)
        if uniq.size > 200000:
            raise CapacityError(f"{uniq.size} distinct image distances; use a uniform spacing")
        table = _pair_table(self.levels, np.sqrt(uniq), omega, "high")
        per = np.zeros((depth, depth, int(np.prod(shape))))
        for a in range(depth):
            for b in range(a, depth):
                per[a, b] = np.bincount(where, weights=table[a, b][inv.ravel()], minlength=per.shape[2])
                per[b, a] = per[a, b]
        per = per.reshape((depth, depth) + shape)

        spec = per
        folds = []
        for ax, m in enumerate(sizes):
            mat, mult = _fold_matrix(m)
            folds.append((mat, mult))
            spec = np.moveaxis(np.tensordot(spec, mat, axes=([2 + ax], [1])), -1, 2 + ax)
        spec = np.moveaxis(spec, (0, 1), (-2, -1))
        lam, vec = np.linalg.eigh(spec)
        weight = functools.reduce(np.multiply.outer, [f[1] for f in folds])
        neg = float((weight[..., None] * np.clip(-lam, 0, None)).sum())
        total = float((weight[..., None] * np.abs(lam)).sum())
        neg_mass = neg / total if total > 0 else 0.0
        if neg_mass >= NEG_MASS_TOL:
            raise EmbeddingError(f"negative spectral mass {neg_mass:.2e} on torus {sizes}")
        amp = vec * np.sqrt(np.clip(lam, 0, None))[..., None, :]

        # covariance actually realised, compared with the target on the grid
        realised = np.einsum("...ik,...jk->...ij", amp, amp)
        realised = np.moveaxis(realised, (-2, -1), (0, 1))
        for ax, m in enumerate(sizes):
            mat = folds[ax][0] / m
            realised = np.moveaxis(np.tensordot(realised, mat, axes=([2 + ax], [1])), -1, 2 + ax)
        crop = (slice(None), slice(None)) + tuple(slice(0, n) for n in grid.extent)
        idx = np.indices(grid.extent).reshape(4, -1).T * np.asarray(grid.spacing)
        dist = np.sqrt((idx ** 2).sum(axis=1))
        ud, ui = np.unique(np.round(dist ** 2, 12), return_inverse=True)
        target = _pair_table(self.levels, np.sqrt(ud), omega, "high")[..., ui.ravel()]
        err = float(np.abs(realised[crop].reshape(depth, depth, -1) - target).max())
        if err > COVARIANCE_TOL:
            raise EmbeddingError(f"periodisation error {err:.2e} on torus {sizes}")

        full_idx = [np.minimum(np.arange(m), m - np.arange(m)) for m in sizes]
        self.amp = amp[np.ix_(*full_idx)]
        self.sizes = sizes
        self.omega = omega
        self.neg_mass = neg_mass
        self.high_error = err

    # low band by pivoted Cholesky

    def _factor_low(self):
        grid, depth = self.grid, self.ladder.depth
        n_pts = grid.size
        idx = np.indices(grid.extent).reshape(4, -1).T
        h = np.asarray(grid.spacing)
        lag = np.indices(grid.extent).reshape(4, -1).T * h
        sq = (lag ** 2).sum(axis=1)
        ud, ui = np.unique(np.round(sq, 12), return_inverse=True)
        tables = _pair_table(self.levels, np.sqrt(ud), self.omega, "low")[..., ui.ravel()]
        tables = tables.reshape((depth, depth) + grid.extent)
        n = depth * n_pts
        diag = np.repeat(tables[np.arange(depth), np.arange(depth)].reshape(depth, -1)[:, 0], n_pts)
        max_rank = max(1, int(LOWRANK_BYTES // (8 * n)))
        factor = np.zeros((n, min(n, max_rank)))
        resid = diag.copy()
        rank = 0
        while rank < factor.shape[1]:
            i = int(np.argmax(resid))
            if resid[i] <= LOWRANK_TOL:
                break
            lev, pt = divmod(i, n_pts)
            off = np.abs(idx - idx[pt])
            col = tables[:, lev][:, off[:, 0], off[:, 1], off[:, 2], off[:, 3]].ravel()
            col -= factor[:, :rank] @ factor[i, :rank]
            factor[:, rank] = col / math.sqrt(resid[i])
            resid -= factor[:, rank] ** 2
            resid[i] = 0.0
            rank += 1
        else:
            if resid.max() > LOWRANK_TOL:
                raise CapacityError(f"low band needs rank above {rank} (memory budget)")
        self.low = np.ascontiguousarray(factor[:, :rank])
        self.low_residual = float(max(resid.max(), 0.0))

    @property
    def provenance(self):
        return {
            "torus": list(self.sizes),
            "omega": self.omega,
            "negative_mass": self.neg_mass,
            "negative_mass_tol": NEG_MASS_TOL,
            "high_band_error": self.high_error,
            "low_rank": int(self.low.shape[1]),
            "low_residual": self.low_residual,
        }

    def implied_covariance(self):
        """Covariance the sampler actually realises, as a dense matrix.

        Rows are ordered level-major then row-major over the grid. Meant for
        verification on small grids.
        """
        depth, n_pts = self.ladder.depth, self.grid.size
        if depth * n_pts > DENSE_CAP:
            raise CapacityError("implied covariance is only formed for small grids")
        cross = np.einsum("...ik,...jk->ij...", self.amp, self.amp)
        corr = np.fft.ifftn(cross, axes=tuple(range(2, 6))).real
        idx = np.indices(self.grid.extent).reshape(4, -1).T
        lag = np.mod(idx[:, None, :] - idx[None, :, :], np.asarray(self.sizes))
        high = corr[:, :, lag[..., 0], lag[..., 1], lag[..., 2], lag[..., 3]]
        high = high.transpose(0, 2, 1, 3).reshape(depth * n_pts, depth * n_pts)
        return high + self.low @ self.low.T

    def sample_pair(self, seed, pair):
        """Two independent joint draws ``(values_2j, values_2j+1)``."""
        rng = replica_generator(seed, pair)
        depth = self.ladder.depth
        shape = self.sizes
        xi = rng.standard_normal((depth,) + shape) + 1j * rng.standard_normal((depth,) + shape)
        spec = np.einsum("...ij,j...->i...", self.amp, xi)
        field_ = np.fft.ifftn(spec, axes=tuple(range(1, 5))) * math.sqrt(np.prod(shape))
        crop = (slice(None),) + tuple(slice(0, n) for n in self.grid.extent)
        field_ = field_[crop]
        z = rng.standard_normal((2, self.low.shape[1]))
        low = (z @ self.low.T).reshape((2, depth) + self.grid.extent)
        return field_.real + low[0], field_.imag + low[1]

    def sample(self, seed, replica=0):
        pair = self.sample_pair(seed, replica // 2)[replica % 2]
        return FieldSample(self.grid, self.ladder, pair, seed, "Circulant", replica,
                           self.params, self.provenance)

    def replicas(self, seed, count):
        """Stack of ``count`` replicas, shape ``(count, depth, *extent)``."""
        out = np.empty((count, self.ladder.depth) + self.grid.extent)
        for j in range((count + 1) // 2):
            a, b = self.sample_pair(seed, j)
            out[2 * j] = a
            if 2 * j + 1 < count:
                out[2 * j + 1] = b
        return out


@functools.lru_cache(maxsize=2)
def circulant_sampler(grid, ladder, params=None):
    return CirculantSampler(grid, ladder, params)


def sample_circulant(grid, ladder, params=None, seed=0, replica=0):
    return circulant_sampler(grid, ladder, params).sample(seed, replica)


# -- radial process ---------------------------------------------------------------


def radius_map(t, R):
    """``r(t) = G^{-1}(t + G(R))``."""
    g_r = float(g_variance(R))
    t = np.atleast_1d(np.asarray(t, dtype=float))
    return np.array([g_inverse(v + g_r) if v > 0 else float(R) for v in t])


def sample_radial(x, R, times, seed, n_paths=None):
    """Brownian path ``X_t`` at the requested times.

    The law of the radial process is that of standard Brownian motion, so the
    path is drawn as such; the radius ``r(t)`` it corresponds to is attached.
    ``n_paths`` adds a leading replica axis.
    """
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0:
        raise DomainError("times must be a non-empty 1-D sequence")
    if times[0] < 0 or np.any(np.diff(times) <= 0):
        raise DomainError("times must be increasing and non-negative")
    if not R > 0:
        raise DomainError("R must be positive")
    rng = replica_generator(seed, 0)
    steps = np.diff(np.concatenate([[0.0], times]))
    shape = (times.size,) if n_paths is None else (int(n_paths), times.size)
    inc = rng.standard_normal(shape) * np.sqrt(steps)
    vals = np.cumsum(inc, axis=-1)
    vals[..., times == 0.0] = 0.0
    x = tuple(float(v) for v in np.asarray(x, dtype=float).ravel())
    return RadialPath(x, float(R), times, vals, radius_map(times, R))
