import math

import numpy as np
import pytest

from sseplab import oracle
from sseplab.core import Configuration, LatticeWindow, SeedSpec
from sseplab.dynamics import direct_exclusion
from sseplab.graphical import generate_event_log


def test_two_site_generator():
    gen = oracle.build_generator("exclusion-segment", 2, particles=1)
    q = gen.dense()
    assert gen.size == 2
    assert q[0, 1] == q[1, 0] == 0.5
    assert np.allclose(q.sum(axis=1), 0)


def test_stirring_generator_structure():
    gen = oracle.build_generator("stirring-segment", 4)
    q = gen.dense()
    assert gen.size == 24
    assert np.allclose(q.sum(axis=1), 0)
    off = q - np.diag(np.diag(q))
    assert set(np.unique(off)) == {0.0, 0.5}
    assert np.all(np.count_nonzero(off, axis=1) == 3)
    assert gen.states == sorted(gen.states)


def test_ring_generator_symmetric():
    gen = oracle.build_generator("exclusion-ring", 6, particles=3)
    assert gen.size == 20
    assert np.array_equal(gen.dense(), gen.dense().T)


def test_state_space_limit():
    with pytest.raises(oracle.StateSpaceTooLarge):
        oracle.build_generator("stirring-segment", 9)


def test_transition_at_zero_is_identity():
    gen = oracle.build_generator("stirring-segment", 3)
    assert np.array_equal(oracle.uniformized_transition(gen, 0.0).p, np.eye(gen.size))


def test_two_site_stay_probability():
    gen = oracle.build_generator("exclusion-segment", 2, particles=1)
    tm = oracle.uniformized_transition(gen, math.log(2.0))
    assert abs(tm.p[0, 0] - 0.75) < 1e-10
    assert tm.truncation_error <= 1e-13


def test_ring_uniform_invariant():
    gen = oracle.build_generator("exclusion-ring", 6, particles=3)
    tol = 1e-13
    pi = np.full(gen.size, 1 / gen.size)
    p = oracle.uniformized_transition(gen, 2.5, tol).p
    assert np.max(np.abs(pi @ p - pi)) < tol


def test_rows_sum_to_one_and_chapman_kolmogorov():
    gen = oracle.build_generator("stirring-segment", 4)
    tol = 1e-13
    ps = oracle.uniformized_transition(gen, 0.3, tol).p
    pt = oracle.uniformized_transition(gen, 0.7, tol).p
    pst = oracle.uniformized_transition(gen, 1.0, tol).p
    for p in (ps, pt, pst):
        assert np.all(np.abs(p.sum(axis=1) - 1) <= 10 * tol)
    assert np.max(np.abs(ps @ pt - pst)) < 10 * tol


def test_propagate_matches_matrix():
    gen = oracle.build_generator("exclusion-segment", 4)
    p0 = np.zeros(gen.size)
    p0[3] = 1.0
    v, _ = oracle.propagate(gen, p0, 1.7)
    assert np.allclose(v, oracle.uniformized_transition(gen, 1.7).p[3], atol=1e-12)


def test_two_site_monte_carlo_frequency():
    window = LatticeWindow(0, 1)
    t = math.log(2.0)
    n = 20_000
    stay = 0
    for i in range(n):
        s = SeedSpec(77).replicate(i)
        c = Configuration(window, np.array([1, 0], dtype=np.int8))
        traj = direct_exclusion(c, generate_event_log(window, t, s))
        stay += traj(t, 0)
    se = math.sqrt(0.75 * 0.25 / n)
    assert abs(stay / n - 0.75) < 3 * se


@pytest.mark.parametrize("t", [0.5, 1.0, 2.0])
def test_negative_correlation_four_sites(t):
    rep = oracle.check_negative_correlation(4, t)
    assert rep.holds
    assert rep.min_margin >= -1e-12


def test_negative_correlation_at_zero_and_singletons(tmp_path):
    rep = oracle.check_negative_correlation(3, 0.0)
    assert rep.max_violation <= 1e-12
    singles = [r for r in oracle.check_negative_correlation(4, 1.0).rows if r["size_T"] == 1]
    assert all(abs(r["worst_margin"]) < 1e-12 for r in singles)
    rep.write_csv(tmp_path / "neg.csv")
    assert (tmp_path / "neg.csv").read_text().startswith("size_T,size_A,pairs,worst_margin")


def test_mean_positive_walk():
    assert oracle.mean_positive_walk(0.0) == 0.0
    for t in (1.0, 4.0, 16.0, 64.0):
        assert oracle.mean_positive_walk(t) <= math.sqrt(t)
    assert abs(oracle.mean_positive_walk(64.0) / 8.0 / 0.398942 - 1) < 0.02


def test_mean_positive_walk_needs_room():
    with pytest.raises(ValueError):
        oracle.mean_positive_walk(64.0, truncation=10)


def test_current_pmf_degenerate_and_symmetric():
    point = oracle.exact_current_distribution(4, 0.0, 1.0)
    assert list(point) == [0] and point[0] == pytest.approx(1.0, abs=1e-12)
    pmf = oracle.exact_current_distribution(4, 0.5, 1.0)
    assert abs(sum(pmf.values()) - 1) < 1e-12
    for j, p in pmf.items():
        assert abs(p - pmf.get(-j, 0.0)) < 1e-13


def test_current_pmf_against_monte_carlo():
    from sseplab.acceptance import mc_current_pmf

    exact = oracle.exact_current_distribution(4, 0.5, 1.0)
    mc = mc_current_pmf(100_000, 0.5, 1.0, SeedSpec(31))
    tv = 0.5 * sum(abs(exact.get(k, 0) - mc.get(k, 0)) for k in set(exact) | set(mc))
    assert tv < 0.02
