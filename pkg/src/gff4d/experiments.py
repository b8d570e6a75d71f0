"""Experiment drivers shared by the command line and the acceptance suite.

Each driver takes an :class:`ExperimentConfig` and returns a :class:`Table`:
column names, rows and a summary dictionary. Nothing here touches the file
system.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .chaos_measure import MIN_DEPTH, MIN_REPLICAS, cauchy_decay_stats, density_field, level_masses
from .errors import StatisticsError
from .field_sampler import (
    FieldSample,
    GridSpec,
    ScaleLadder,
    circulant_sampler,
    sample_dense_field,
)
from .kernels import KernelParams, Regime, contract, cov_closed_form, g_variance, oracle_matrix
from .kpz_lab import (
    FractalSpec,
    StoppingRunParams,
    TailParams,
    empirical_ladder,
    geometric_ladder,
    kpz_inverse,
    kpz_quadratic,
    mgf_check,
    quantum_exponent_empirical,
    quantum_exponent_exact,
    simulate_stopping_times,
    tail_probability_experiment,
)


@dataclass
class Table:
    columns: list
    rows: list
    summary: dict = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict)


def kernel_params(cfg):
    return KernelParams(gamma=cfg.gamma, epsilon0=cfg.eps0, R=cfg.R)


def grid_of(cfg):
    return GridSpec.box(cfg.grid, cfg.side)


def ladder_of(cfg):
    return ScaleLadder(cfg.eps0, cfg.depth)


def fractal_of(cfg, grid=None):
    """The configured set; Point and PlanePatch pass through a central cell centre."""
    grid = grid or grid_of(cfg)
    mid = np.asarray(grid.origin) + (np.asarray(grid.extent) // 2 + 0.5) * np.asarray(grid.spacing)
    if cfg.fractal == "Point":
        return FractalSpec.point(mid)
    if cfg.fractal == "Ball":
        return FractalSpec.ball(mid, 0.3 * cfg.side)
    if cfg.fractal == "PlanePatch":
        lo = grid.origin[:2]
        hi = tuple(o + n * h for o, n, h in zip(grid.origin[:2], grid.extent[:2], grid.spacing[:2]))
        return FractalSpec.plane_patch(lo, hi, (mid[2], mid[3]))
    return FractalSpec.product_cantor(start=grid.origin[0], length=cfg.side, fixed=mid[3])


def sample_values(cfg, count=None, seed=None, threads=1):
    """Field replicas as an array ``(count, depth, *extent)``."""
    count = cfg.replicas if count is None else count
    seed = cfg.seed if seed is None else seed
    grid, ladder, params = grid_of(cfg), ladder_of(cfg), kernel_params(cfg)
    if cfg.backend == "circulant":
        return circulant_sampler(grid, ladder, params).replicas(seed, count)
    draw = lambda r: sample_dense_field(grid, ladder, params, seed, r).values
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return np.array(list(pool.map(draw, range(count))))
    return np.array([draw(r) for r in range(count)])


def _z(est, se, target):
    return float((est - target) / se) if se > 0 else (0.0 if est == target else math.inf)


# -- cov-check --------------------------------------------------------------------------


def regime_pairs(rng, regime, count):
    """Random ``(eps1, eps2, d)`` triples inside one closed-form regime."""
    out = []
    while len(out) < count:
        e1, e2 = rng.uniform(0.05, 1.5, 2)
        if regime is Regime.CONCENTRIC:
            d = 0.0
        elif regime is Regime.INCLUSION:
            if abs(e1 - e2) < 1e-3:
                continue
            d = abs(e1 - e2) * rng.uniform(0.05, 0.95)
        else:
            d = (e1 + e2) * rng.uniform(1.05, 3.0)
        out.append((float(e1), float(e2), float(d)))
    return out


def cov_check(cfg, threads=1):
    rng = np.random.default_rng(cfg.seed)
    rows = []
    worst = 0.0
    for regime in (Regime.CONCENTRIC, Regime.INCLUSION, Regime.DISJOINT):
        for i, (e1, e2, d) in enumerate(regime_pairs(rng, regime, cfg.cov_pairs)):
            closed = cov_closed_form(e1, e2, d)
            oracle = contract(oracle_matrix(e1, e2, d), e1, e2)
            err = abs(closed - oracle)
            worst = max(worst, err)
            rows.append([regime.value, i, e1, e2, d, closed, oracle, err])
    return Table(["regime", "pair", "eps1", "eps2", "d", "closed_form", "oracle", "abs_err"],
                 rows, {"pairs_per_regime": cfg.cov_pairs, "max_abs_err": worst})


# -- sample-field -----------------------------------------------------------------------


def sample_field(cfg, threads=1):
    """Per-level variance at the first cell over the replicas, against ``G(eps)``."""
    values = sample_values(cfg, threads=threads)
    grid, ladder = grid_of(cfg), ladder_of(cfg)
    if values.shape[0] < 2:
        raise StatisticsError("sample-field needs at least 2 replicas for its statistics")
    corner = values[:, :, 0, 0, 0, 0]
    sq = corner ** 2
    rows = []
    for n, eps in enumerate(ladder.levels):
        g = float(g_variance(eps))
        est = float(sq[:, n].mean())
        se = float(sq[:, n].std(ddof=1) / math.sqrt(sq.shape[0]))
        rows.append([n + 1, float(eps), est, se, g, _z(est, se, g)])
    first = FieldSample(grid, ladder, values[0], cfg.seed, cfg.backend.capitalize(), 0,
                        kernel_params(cfg))
    return Table(["level", "eps", "estimate", "stderr", "target", "zscore"], rows,
                 {"replicas": int(values.shape[0])}, {"field.bin": first.to_bytes()})


# -- measure-stats ----------------------------------------------------------------------


def measure_stats(cfg, threads=1):
    """Mean total mass per level and, when possible, the Cauchy difference moments."""
    values = sample_values(cfg, threads=threads)
    grid, ladder, params = grid_of(cfg), ladder_of(cfg), kernel_params(cfg)
    if values.shape[0] < 2:
        raise StatisticsError("measure-stats needs at least 2 replicas")
    masses = level_masses(values, grid, ladder, params.gamma)
    vol = cfg.side ** 4
    mean = masses.mean(axis=0)
    se = masses.std(axis=0, ddof=1) / math.sqrt(masses.shape[0])
    cauchy = None
    if values.shape[0] >= MIN_REPLICAS and ladder.depth >= MIN_DEPTH:
        cauchy = cauchy_decay_stats(values, params, grid=grid, ladder=ladder)
    rows = []
    for n, eps in enumerate(ladder.levels):
        m2 = cauchy.second_moment[n - 1] if cauchy is not None and n > 0 else math.nan
        m2_se = cauchy.stderr[n - 1] if cauchy is not None and n > 0 else math.nan
        rows.append([n + 1, float(eps), float(mean[n]), float(se[n]), vol,
                     _z(mean[n], se[n], vol), float(m2), float(m2_se)])
    summary = {"replicas": int(values.shape[0]), "resolved": bool(max(grid.spacing) <= ladder.levels[-1] / 2)}
    if cauchy is not None:
        summary["cauchy_rate"] = cauchy.rate
        summary["cauchy_bound_rate"] = cauchy.bound_rate
        summary["cauchy_monotone_fraction"] = cauchy.bootstrap_monotone_fraction(1000, cfg.seed)
    return Table(["level", "eps", "estimate", "stderr", "target", "zscore", "diff_m2", "diff_m2_stderr"],
                 rows, summary)


# -- stopping time experiments ----------------------------------------------------------


def exact_ladder(cfg):
    if cfg.lambdas:
        return tuple(sorted(cfg.lambdas, reverse=True))
    return tuple(geometric_ladder(cfg.lambda_top, cfg.lambda_decades, cfg.lambda_per_decade))


def stopping_params(cfg, ladder=None):
    return StoppingRunParams(cfg.gamma, ladder or exact_ladder(cfg), cfg.dt, cfg.mc_replicas,
                             cfg.max_time, cfg.method)


def kpz_exact(cfg, threads=1):
    spec = fractal_of(cfg)
    params = stopping_params(cfg)
    sample = simulate_stopping_times(params, cfg.seed)
    kappa = spec.kappa
    target_K = kpz_inverse(kappa, cfg.gamma)
    vals = np.exp(-8 * math.pi ** 2 * kappa * sample.times)
    if vals.shape[0] < 2:
        raise StatisticsError("kpz-exact needs at least 2 replicas")
    est = vals.mean(axis=0)
    se = vals.std(axis=0, ddof=1) / math.sqrt(vals.shape[0])
    rows = [[lam, float(e), float(s), lam ** target_K, _z(e, s, lam ** target_K)]
            for lam, e, s in zip(params.lambda_ladder, est, se)]
    fit = quantum_exponent_exact(kappa, params, cfg.seed, sample=sample)
    K = min(max(fit.slope, 0.0), 1.0)
    summary = {"fractal": cfg.fractal, "kappa": kappa, "K_target": target_K, "fit": fit.to_dict(),
               "kappa_from_fit": kpz_quadratic(K, cfg.gamma),
               "censored_fraction": sample.censored_fraction}
    return Table(["lambda", "estimate", "stderr", "target", "zscore"], rows, summary)


def mgf(cfg, threads=1):
    params = stopping_params(cfg, tuple(sorted(cfg.mgf_lambdas, reverse=True)))
    s_values = [-f * cfg.gamma for f in cfg.s_fractions]
    table = mgf_check(params, s_values, cfg.seed)
    rows = [[r.lam, r.s, r.estimate, r.stderr, r.target, r.zscore] for r in table]
    worst = max(abs(r.zscore) for r in table)
    return Table(["lambda", "s", "estimate", "stderr", "target", "zscore"], rows,
                 {"max_abs_z": worst, "replicas": cfg.mc_replicas})


def kpz_empirical(cfg, threads=1):
    grid, ladder, params = grid_of(cfg), ladder_of(cfg), kernel_params(cfg)
    spec = fractal_of(cfg, grid)
    values = sample_values(cfg, threads=threads)
    measures = [density_field(FieldSample(grid, ladder, v, cfg.seed, cfg.backend.capitalize(), i),
                              ladder.depth, params) for i, v in enumerate(values)]
    lambdas = np.array(cfg.lambdas) if cfg.lambdas else empirical_ladder(
        measures, cfg.lambda_top, cfg.lambda_decades, cfg.lambda_per_decade)
    res = quantum_exponent_empirical(spec, measures, lambdas)
    exact = kpz_inverse(spec.kappa, cfg.gamma)
    # normalisation that best matches Lambda^K at the exact-route exponent
    shift = float(np.mean(np.log(res.mean_mass) - exact * np.log(lambdas)))
    target = np.exp(shift) * lambdas ** exact
    rows = [[float(l), float(e), float(s), float(t), _z(e, s, t)]
            for l, e, s, t in zip(lambdas, res.mean_mass, res.stderr, target)]
    summary = {"fractal": cfg.fractal, "kappa": spec.kappa, "K_exact_route": exact,
               "fit": res.fit.to_dict(), "difference": res.fit.slope - exact}
    return Table(["lambda", "estimate", "stderr", "target", "zscore"], rows, summary)


def tail(cfg, threads=1):
    tparams = TailParams(cfg.tail_delta, cfg.tail_rho, tuple(cfg.tail_A))
    res = tail_probability_experiment(tparams, cfg.gamma, cfg.replicas, cfg.seed,
                                      ladder_of(cfg), cfg.tail_cells)
    rows = [[r.A, r.count, r.probability, r.stderr, r.log_bound_slope, int(r.censored)]
            for r in res.rows]
    summary = {"rate": res.rate, "rate_stderr": res.rate_stderr, "bound_rate": res.bound_rate,
               "passed": bool(res.passed), "radius": res.radius, "replicas": int(res.masses.size)}
    return Table(["A", "count", "probability", "stderr", "bound_log_slope", "censored"], rows, summary)


DRIVERS = {
    "cov-check": cov_check,
    "sample-field": sample_field,
    "measure-stats": measure_stats,
    "kpz-exact": kpz_exact,
    "kpz-empirical": kpz_empirical,
    "mgf-check": mgf,
    "tail-check": tail,
}

# configuration keys each subcommand reads; others only draw a warning
RELEVANT = {
    "cov-check": {"seed", "cov_pairs"},
    "sample-field": {"gamma", "eps0", "R", "grid", "side", "depth", "backend", "replicas", "seed"},
    "measure-stats": {"gamma", "eps0", "R", "grid", "side", "depth", "backend", "replicas", "seed"},
    "kpz-exact": {"gamma", "fractal", "lambdas", "lambda_top", "lambda_decades", "lambda_per_decade",
                  "mc_replicas", "dt", "max_time", "method", "seed"},
    "kpz-empirical": {"gamma", "eps0", "R", "grid", "side", "depth", "backend", "replicas", "seed",
                      "fractal", "lambdas", "lambda_top", "lambda_decades", "lambda_per_decade"},
    "mgf-check": {"gamma", "mc_replicas", "dt", "max_time", "method", "s_fractions", "mgf_lambdas",
                  "seed"},
    "tail-check": {"gamma", "eps0", "R", "depth", "replicas", "seed", "tail_delta", "tail_rho",
                   "tail_A", "tail_cells", "backend"},
}
