import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats as sps
from scipy.special import ndtr

from sseplab.stats import (
    P_FLOOR,
    MomentAccumulator,
    TheoryConstants,
    bootstrap_se,
    chi_square_geometric,
    covariance_check,
    fbm_samples,
    jittered_standardize,
    kolmogorov_sf,
    ks_one_sample,
    ks_two_sample,
    ks_two_sample_threshold,
    max_moment_scaling,
    merge_tree,
    modulus_diagnostic,
    sup_modulus,
    tagged_current_gap,
    variance_scaling,
)


def test_theory_constants_half_density():
    th = TheoryConstants(0.5)
    assert th.sigma2_j == pytest.approx(0.199471, abs=1e-6)
    assert th.sigma2_x == pytest.approx(0.797885, abs=1e-6)
    assert th.k_limit == pytest.approx(0.398942, abs=1e-6)
    assert th.fbm_cov(1.0, 0.25, th.sigma2_j) == pytest.approx(0.5 * 0.199471 * (1.5 - math.sqrt(0.75)), abs=1e-6)
    assert th.fbm_cov(2.0, 2.0, 1.0) == pytest.approx(math.sqrt(2.0))


def test_theory_constants_reject_degenerate():
    for rho in (0.0, 1.0):
        with pytest.raises(ValueError):
            TheoryConstants(rho)
    with pytest.raises(ValueError):
        TheoryConstants.fbm_cov(0.2, 0.5, 1.0)


# moments


def test_accumulator_matches_numpy():
    x = np.random.default_rng(3).gamma(2.0, size=1000)
    acc = MomentAccumulator.of(x)
    assert acc.n == 1000
    assert acc.mean == pytest.approx(x.mean())
    assert acc.variance() == pytest.approx(x.var(ddof=1))
    for p in (4, 6):
        assert acc.central_moment(p) == pytest.approx(np.mean((x - x.mean()) ** p), rel=1e-10)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=60), st.integers(1, 59))
def test_merge_equals_batch(values, cut):
    cut = min(cut, len(values) - 1)
    a = MomentAccumulator.of(values[:cut])
    b = MomentAccumulator.of(values[cut:])
    whole = MomentAccumulator.of(values)
    merged = a.merge(b)
    assert merged.n == whole.n
    assert merged.mean == pytest.approx(whole.mean, abs=1e-9)
    scale = max(1.0, max(abs(v) for v in values))
    for p in range(2, 7):
        assert merged.sums[p] == pytest.approx(whole.sums[p], rel=1e-7, abs=1e-9 * scale**p * len(values))


def test_merge_tree_fixed_order_is_bit_reproducible():
    x = np.random.default_rng(8).normal(size=257)
    accs = [MomentAccumulator.of([v]) for v in x]
    a = merge_tree(accs)
    b = merge_tree(list(accs))
    assert (a.n, a.mean, a.sums) == (b.n, b.mean, b.sums)
    assert a.variance() == pytest.approx(x.var(ddof=1))


def test_standard_errors_shrink_like_root_n():
    rng = np.random.default_rng(12)
    small = MomentAccumulator.of(rng.normal(size=1000))
    large = MomentAccumulator.of(rng.normal(size=4000))
    for f in ("se_mean", "se_variance"):
        ratio = getattr(small, f)() / getattr(large, f)()
        assert 2 / 1.5 <= ratio <= 2 * 1.5
    data = rng.normal(size=4000)
    boot_small = bootstrap_se(np.var, data[:1000], rng=np.random.default_rng(1))
    boot_large = bootstrap_se(np.var, data, rng=np.random.default_rng(1))
    assert 2 / 1.5 <= boot_small / boot_large <= 2 * 1.5


# goodness of fit


@pytest.mark.parametrize("x", [0.3, 0.5, 0.8, 1.0, 1.36, 1.63, 2.5])
def test_kolmogorov_series_matches_scipy(x):
    assert kolmogorov_sf(x) == pytest.approx(sps.kstwobign.sf(x), abs=1e-9)


def test_kolmogorov_edges():
    assert kolmogorov_sf(0.0) == 1.0
    assert kolmogorov_sf(0.1) == 1.0
    assert kolmogorov_sf(50.0) == P_FLOOR


def test_ks_self_test():
    x = np.random.default_rng(4).standard_normal(4000)
    d, p = ks_one_sample(x, ndtr)
    ref = sps.kstest(x, "norm")
    assert d == pytest.approx(ref.statistic)
    assert p > 1e-3


def test_ks_calibration():
    rng = np.random.default_rng(9)
    ps = np.array([ks_one_sample(rng.standard_normal(400), ndtr)[1] for _ in range(400)])
    # p-values of a calibrated test are roughly uniform
    assert sps.kstest(ps, "uniform").pvalue > 1e-3


def test_ks_constant_sample():
    d, p = ks_one_sample(np.zeros(1000), ndtr)
    assert d == pytest.approx(0.5)
    assert p < 1e-30 * 1.0001


def test_two_sample_ks_against_scipy_and_threshold():
    rng = np.random.default_rng(5)
    a, b = rng.normal(size=2000), rng.normal(size=2000)
    d, _ = ks_two_sample(a, b)
    assert d == pytest.approx(sps.ks_2samp(a, b).statistic)
    crit = ks_two_sample_threshold(2000, 2000, 0.01)
    assert crit == pytest.approx(1.6276 * math.sqrt(2 / 2000), rel=1e-3)
    assert d < crit
    shifted, _ = ks_two_sample(a, b + 0.5)
    assert shifted > crit


def test_jitter_spreads_lattice_values():
    rng = np.random.default_rng(6)
    lattice = np.round(rng.normal(scale=3.0, size=20_000))
    z = jittered_standardize(lattice, 9.0, np.random.default_rng(1))
    d, _ = ks_one_sample(z, ndtr)
    raw, _ = ks_one_sample(lattice / 3.0, ndtr)
    assert d < 0.015 < raw


def test_chi_square_geometric():
    rng = np.random.default_rng(2)
    good = rng.geometric(0.5, size=5000)
    stat, dof, p = chi_square_geometric(good, 0.5)
    assert dof >= 5 and p > 1e-3
    _, _, p_bad = chi_square_geometric(rng.geometric(0.4, size=5000), 0.5)
    assert p_bad < 1e-3
    with pytest.raises(ValueError):
        chi_square_geometric([0, 1, 2], 0.5)


# scaling


def fbm_grid(n=4000, seed=0, sigma2=1.0):
    times = np.array([16.0, 32.0, 64.0, 128.0, 256.0])
    return times, fbm_samples(times, n, np.random.default_rng(seed), sigma2=sigma2)


def test_fbm_sampler_covariance():
    times, x = fbm_grid(n=40_000)
    emp = np.cov(x, rowvar=False)
    for i, t in enumerate(times):
        for j, s in enumerate(times[: i + 1]):
            assert emp[i, j] == pytest.approx(TheoryConstants.fbm_cov(t, s, 1.0), rel=0.05)


def test_variance_scaling_self_test():
    times, x = fbm_grid()
    fit = variance_scaling(times, x, rng=np.random.default_rng(1))
    assert abs(fit.slope - 0.5) < 1.96 * fit.stderr
    assert fit.stderr > 0


def test_variance_scaling_preconditions():
    with pytest.raises(ValueError):
        variance_scaling([1, 2, 4], np.ones((10, 3)))
    with pytest.raises(ValueError):
        variance_scaling([1, 2, 4, 8], np.random.default_rng(0).normal(size=(10, 4)))
    with pytest.raises(ValueError):
        variance_scaling([1, 4, 16, 64], np.ones((10, 4)))


def test_covariance_self_test():
    fr = np.array([0.25, 0.5, 0.75, 1.0])
    x = fbm_samples(fr, 4000, np.random.default_rng(2), sigma2=0.199471)
    entries = covariance_check(fr, x, 0.199471, rng=np.random.default_rng(3))
    assert len(entries) == 10
    assert all(e.t >= e.s for e in entries)
    assert all(e.within(0.15, 4.0) for e in entries)
    diag = [e for e in entries if e.t == e.s == 1.0][0]
    assert diag.theory == pytest.approx(0.199471)


# path diagnostics


def random_walks(n=500, m=64, seed=0):
    steps = np.random.default_rng(seed).choice([-1, 0, 1], size=(n, m))
    return np.concatenate((np.zeros((n, 1), dtype=int), np.cumsum(steps, axis=1)), axis=1)


def test_max_moment_first_point_and_monotone():
    paths = random_walks()
    fit = max_moment_scaling(paths, p=6, m_grid=(1, 2, 4, 8, 16, 32, 64))
    assert fit.values[0] == pytest.approx(np.mean(np.abs(paths[:, 1].astype(float)) ** 6))
    assert np.all(np.diff(fit.values) >= 0)
    with pytest.raises(ValueError):
        max_moment_scaling(paths, m_grid=(128,))


def test_max_moment_overshoot_on_exact_fbm():
    # exact fBM(1/4) on the integer grid: the slope of the discrete maximum
    # sits well above the asymptotic p/4 = 1.5 at these m
    times = np.arange(1, 257, dtype=float)
    x = fbm_samples(times, 2000, np.random.default_rng(11), sigma2=0.199471)
    paths = np.concatenate((np.zeros((x.shape[0], 1)), x), axis=1)
    fit = max_moment_scaling(paths, p=6)
    assert fit.slope > 1.65


def test_modulus_whole_interval_is_range():
    paths = random_walks(m=64)
    mod = sup_modulus(paths, 64, 1.0)
    rng_ = (paths.max(axis=1) - paths.min(axis=1)) * 64 ** (-0.25)
    assert np.allclose(mod, rng_)


def test_modulus_monotone_in_delta():
    paths = random_walks(n=2000, m=256, seed=3)
    rows = modulus_diagnostic(paths, 256, [1 / 4, 1 / 16, 1 / 64], [0.5, 2.0])
    for eps in (0.5, 2.0):
        probs = [r["prob"] for r in rows if r["eps"] == eps]
        assert probs == sorted(probs, reverse=True)


def test_modulus_smallest_gap_near_zero():
    paths = random_walks(n=2000, m=256, seed=3)
    assert modulus_diagnostic(paths, 256, [1 / 256], [2.0])[0]["prob"] < 0.01


def test_gap_zero_when_frozen():
    z = np.zeros((10, 65))
    g = tagged_current_gap(z, z, 64, 1.0)
    assert g.median == 0.0 and g.q90 == 0.0


def test_gap_two_routes_agree():
    rng = np.random.default_rng(0)
    j = rng.integers(-3, 4, size=(50, 17))
    x = rng.integers(-6, 7, size=(50, 17))
    g = tagged_current_gap(x, j, 16, 0.5)
    direct = np.array([max(abs(xi - 2 * ji) for xi, ji in zip(xr, jr)) for xr, jr in zip(x, j)]) * 16 ** (-0.25)
    assert np.array_equal(g.gaps, direct)
