import io
import math

import numpy as np
import pytest

from gff4d.chaos_measure import (
    ChaosMeasure,
    _cell_average_multiplier,
    box_mask,
    cauchy_decay_stats,
    density_field,
    integrate,
    level_functionals,
    level_masses,
    second_moment_oracle,
    tilt,
    variation_series,
)
from gff4d.errors import DensityOverflowError, DomainError, StatisticsError
from gff4d.field_sampler import (
    CirculantSampler,
    FieldSample,
    GridSpec,
    ScaleLadder,
    sample_dense_field,
)
from gff4d.kernels import KernelParams, g_variance
from gff4d.special_functions import bessel_k

PI2 = math.pi ** 2
GRID = GridSpec.box((6, 6, 1, 1))
LADDER = ScaleLadder(0.5, 3)
PARAMS = KernelParams()
FLAT = KernelParams(gamma=1e-300)


@pytest.fixture(scope="module")
def sampler():
    return CirculantSampler(GRID, LADDER)


@pytest.fixture(scope="module")
def replicas(sampler):
    return sampler.replicas(seed=21, count=400)


def _sample(values, grid=GRID, ladder=LADDER):
    return FieldSample(grid, ladder, values, 0, "Dense")


def test_lebesgue_when_gamma_vanishes(sampler):
    s = sampler.sample(seed=1)
    m = density_field(s, 2, FLAT)
    np.testing.assert_allclose(m.cell_mass, GRID.cell_volume, rtol=1e-15)
    assert integrate(m, lambda x: x[:, 0] < 0.5) == pytest.approx(0.5)


def test_masses_positive_and_total(sampler):
    m = density_field(sampler.sample(seed=2), 3, PARAMS)
    assert np.all(m.cell_mass > 0)
    assert integrate(m, 1.0) == pytest.approx(m.total_mass)
    assert integrate(m, 0.0) == 0.0
    assert m.meta["resolved"] is False


def test_integrate_linear_and_bounded(sampler):
    m = density_field(sampler.sample(seed=3), 2, PARAMS)
    rng = np.random.default_rng(0)
    f, g = rng.normal(size=GRID.extent), rng.normal(size=GRID.extent)
    assert integrate(m, 2 * f - g) == pytest.approx(2 * integrate(m, f) - integrate(m, g))
    assert abs(integrate(m, f)) <= np.abs(f).max() * m.total_mass


def test_additivity_on_cells(sampler):
    m = density_field(sampler.sample(seed=4), 2, PARAMS)
    left = m.mass_in((0, 0, 0, 0), (0.5, 1, 1, 1))
    right = m.mass_in((0.5, 0, 0, 0), (1, 1, 1, 1))
    assert left + right == pytest.approx(m.total_mass, rel=1e-14)


def test_level_and_overflow_errors(sampler):
    s = sampler.sample(seed=5)
    with pytest.raises(DomainError):
        density_field(s, 0)
    with pytest.raises(DomainError):
        density_field(s, 4)
    hot = _sample(np.full((3,) + GRID.extent, 1e4))
    with pytest.raises(DensityOverflowError):
        density_field(hot, 1, PARAMS)


def test_mean_measure_identity(replicas):
    # E[m_n(A)] = vol(A) at every level and for a sub-box
    masses = level_masses(replicas, GRID, LADDER, PARAMS.gamma)
    sub = level_masses(replicas, GRID, LADDER, PARAMS.gamma, box=((0, 0, 0, 0), (0.5, 0.5, 1, 1)))
    for arr, vol in ((masses, 1.0), (sub, 0.25)):
        se = arr.std(axis=0, ddof=1) / math.sqrt(arr.shape[0])
        assert np.all(np.abs(arr.mean(axis=0) - vol) <= 3 * se)


def test_cauchy_stats_requirements(replicas):
    with pytest.raises(StatisticsError):
        cauchy_decay_stats(replicas[:50], PARAMS, grid=GRID, ladder=LADDER)
    with pytest.raises(StatisticsError):
        cauchy_decay_stats(replicas[:, :2], PARAMS, grid=GRID, ladder=ScaleLadder(0.5, 2))
    flat = cauchy_decay_stats(replicas, FLAT, grid=GRID, ladder=LADDER)
    assert np.all(flat.second_moment <= 1e-25)


def test_cauchy_stats_from_samples(sampler):
    samples = [sampler.sample(seed=6, replica=r) for r in range(100)]
    st = cauchy_decay_stats(samples)
    assert st.second_moment.shape == (2,) and np.all(st.stderr > 0)
    assert st.bound_rate == pytest.approx(7 * PI2)


def test_weak_convergence_proxy():
    # along one coupled sample the largest increment of M_n(f) is not the last
    # one in at least 90% of replicas
    grid, ladder = GridSpec.box(8), ScaleLadder(0.5, 4)
    sampler = CirculantSampler(grid, ladder)
    pts = grid.points()
    bump = np.exp(-np.sum((pts - 0.5) ** 2, axis=1) * 8)
    vals = sampler.replicas(seed=7, count=400)
    m = level_masses(vals, grid, ladder, PARAMS.gamma, weights=bump)
    step = np.abs(np.diff(m, axis=1))
    share = np.mean(step[:, -1] < step[:, :-1].max(axis=1))
    assert share >= 0.9
    one = FieldSample(grid, ladder, vals[3], 7, "Circulant", 3)
    np.testing.assert_allclose(level_functionals(one, lambda x: np.exp(-np.sum((x - 0.5) ** 2, axis=1) * 8)),
                               m[3], rtol=1e-12)


def test_variation_series_monotone(sampler):
    series = variation_series(sampler.sample(seed=8), PARAMS)
    assert series.shape == (3,) and np.all(np.diff(series) >= 0)


def test_second_moment_oracle_basics():
    box = ((0, 0, 0, 0), (0.25, 0.25, 0.25, 0.25))
    assert second_moment_oracle(box, 2, KernelParams(gamma=0.0 + 1e-300)) == pytest.approx(0.25 ** 8)
    vals = [second_moment_oracle(box, 2, KernelParams(gamma=g)) for g in (0.5, 1.5, math.pi)]
    assert vals[0] < vals[1] < vals[2]
    # converged in the node count
    assert second_moment_oracle(box, 2, PARAMS, nodes=8) == pytest.approx(vals[2], rel=1e-8)


def test_second_moment_oracle_matches_fine_midpoint():
    box = ((0, 0, 0, 0), (0.25,) * 4)
    oracle = second_moment_oracle(box, 1, PARAMS)
    n, h = 5, 0.05
    idx = np.indices((n,) * 4).reshape(4, -1).T
    d = np.linalg.norm(idx[:, None] - idx[None], axis=-1) * h
    from gff4d.kernels import cov_scalar_array
    mid = np.exp(PI2 * cov_scalar_array(0.5, 0.5, d)).sum() * h ** 8
    assert mid == pytest.approx(oracle, rel=2e-3)


def test_tilt_examples(sampler):
    m = density_field(sampler.sample(seed=9), 2, PARAMS)
    root = GRID.points()[0]
    flat = tilt(m, root, FLAT)
    np.testing.assert_allclose(flat.cell_mass, m.cell_mass)
    t = tilt(m, root, PARAMS)
    # a cell at distance 5/6 along one axis
    k0 = bessel_k(0, 5 / 6)
    assert t.multiplier[5, 0, 0, 0] == pytest.approx(math.exp(PI2 * k0 / (2 * PI2)), rel=1e-12)
    assert math.isfinite(t.total_mass) and t.total_mass > m.total_mass
    assert t.root_cell == (0, 0, 0, 0)


def test_tilt_unit_distance_and_far_field():
    grid = GridSpec((0, 0, 0, 0), (1.0, 1.0, 1.0, 1.0), (30, 1, 1, 1))
    m = ChaosMeasure(grid, 1, 0.5, np.ones(grid.extent), math.pi)
    t = tilt(m, grid.points()[0], PARAMS)
    assert t.multiplier[1, 0, 0, 0] == pytest.approx(math.exp(PI2 * 0.4210244382 / (2 * PI2)), rel=1e-9)
    assert t.multiplier[-1, 0, 0, 0] == pytest.approx(1.0, abs=1e-11)
    with pytest.raises(DomainError):
        tilt(m, (-1.0, 0, 0, 0), PARAMS)


def test_root_cell_average():
    a = 0.5
    h = np.full(4, 1 / 24)
    assert _cell_average_multiplier(0.0, -h, h) == pytest.approx(1.0, abs=1e-13)
    # cross-check with Monte Carlo on the same cube
    rng = np.random.default_rng(4)
    y = (rng.random((400000, 4)) * 2 - 1) * h
    mc = np.exp(a * bessel_k(0, np.linalg.norm(y, axis=1)))
    se = mc.std() / math.sqrt(mc.size)
    assert abs(_cell_average_multiplier(a, -h, h) - mc.mean()) <= 4 * se


def test_measure_exports(sampler):
    m = density_field(sampler.sample(seed=10), 1, PARAMS)
    text = m.to_csv()
    lines = text.strip().split("\n")
    assert lines[0].startswith("i1,i2,i3,i4,x1")
    assert len(lines) == GRID.size + 1
    assert float(lines[1].split(",")[-1]) == m.cell_mass[0, 0, 0, 0]
    back = ChaosMeasure.from_bytes(m.to_bytes())
    assert back.cell_mass.tobytes() == m.cell_mass.tobytes() and back.meta == m.meta
    buf = io.StringIO()
    m.to_csv(buf)
    assert buf.getvalue() == text


def test_box_mask():
    mask = box_mask(GRID, (0, 0, 0, 0), (0.5, 0.5, 1, 1))
    assert mask.sum() == 9


def test_dense_field_measure_mean():
    grid = GridSpec.box((3, 3, 1, 1))
    masses = np.array([density_field(sample_dense_field(grid, LADDER, PARAMS, seed=3, replica=r), 3).total_mass
                       for r in range(400)])
    assert abs(masses.mean() - 1.0) <= 3 * masses.std() / 20
    assert g_variance(LADDER.levels[-1]) > g_variance(LADDER.levels[0])
