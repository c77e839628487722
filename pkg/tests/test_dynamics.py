import math

import numpy as np
import pytest

from sseplab.core import Configuration, LatticeWindow, Purpose, SeedSpec, sample_config
from sseplab.dynamics import (
    FrameInvariantError,
    WindowMismatch,
    direct_exclusion,
    evolve_lagrangian,
    exclusion_from_stirring,
)
from sseplab.graphical import EventLog, evolve_stirring, window_halfwidth
from sseplab.stats import chi_square_bernoulli


def run(seed, w=20, horizon=10.0, rho=0.5):
    window = LatticeWindow.symmetric(w)
    s = SeedSpec(seed)
    config = sample_config(window, rho, s.stream(Purpose.CONFIG, 0))
    stirring = evolve_stirring(window, horizon, s)
    return config, stirring


@pytest.mark.parametrize("rho", [0.0, 1.0])
def test_degenerate_densities_stay_put(rho):
    config, stirring = run(4, rho=rho)
    traj = exclusion_from_stirring(config, stirring)
    for t in (0.0, 3.3, 10.0):
        assert np.all(traj.at(t) == int(rho))


def test_particle_count_conserved():
    for seed in range(20):
        config, stirring = run(seed)
        traj = exclusion_from_stirring(config, stirring)
        assert all(traj.particle_count(t) == config.particle_count for t in np.linspace(0, 10, 7))


def test_shared_clock_routes_agree_bitwise():
    grid = 32.0 * np.array([1 / 16, 1 / 8, 1 / 4, 1 / 2, 1.0])
    for seed in range(100):
        config, stirring = run(seed, w=window_halfwidth(32.0, 1e-9), horizon=32.0)
        a = exclusion_from_stirring(config, stirring)
        b = direct_exclusion(config, stirring.log)
        for t in grid:
            assert a.at(t).tobytes() == b.at(t).tobytes()


def test_single_ring_moves_particle_right():
    window = LatticeWindow(0, 1)
    config = Configuration(window, np.array([1, 0], dtype=np.int8))
    log = EventLog(window, 1.0, np.array([0.5]), np.array([0]))
    traj = direct_exclusion(config, log)
    assert traj.at(0.4).tolist() == [1, 0]
    assert traj.at(0.5).tolist() == [0, 1]


def test_no_rings_constant():
    window = LatticeWindow.symmetric(3)
    config = sample_config(window, 0.5, SeedSpec(2).stream(Purpose.CONFIG, 0))
    log = EventLog(window, 5.0, np.zeros(0), np.zeros(0, dtype=np.int64))
    traj = direct_exclusion(config, log)
    assert np.array_equal(traj.at(5.0), config.occupancy)


def test_window_mismatch_rejected():
    config, stirring = run(1)
    other = sample_config(LatticeWindow.symmetric(5), 0.5, SeedSpec(1).stream(Purpose.CONFIG, 0))
    with pytest.raises(WindowMismatch):
        exclusion_from_stirring(other, stirring)
    with pytest.raises(WindowMismatch):
        direct_exclusion(other, stirring.log)
    assert config.window != other.window


def test_origin_marginal_is_bernoulli():
    times = (0.0, 8.0, 32.0)
    w = window_halfwidth(32.0, 1e-9)
    samples = {t: [] for t in times}
    for seed in range(600):
        config, stirring = run(seed, w=w, horizon=32.0)
        traj = direct_exclusion(config, stirring.log)
        for t in times:
            samples[t].append(traj(t, 0))
    for t in times:
        _, p = chi_square_bernoulli(samples[t], 0.5)
        assert p > 1e-3, t


def test_frame_blocked_when_neighbours_full():
    w = 6
    frame = np.ones(2 * w + 1, dtype=np.int8)
    traj = evolve_lagrangian(0.5, 50.0, SeedSpec(3), w, initial=frame, exchanges=False)
    assert traj.shift_times.size == 0
    assert traj.displacement(50.0) == 0
    assert np.all(traj.final == 1)


def test_frame_origin_stays_occupied():
    for seed in range(50):
        traj = evolve_lagrangian(0.5, 20.0, SeedSpec(seed), 30)
        assert traj.final[30] == 1
        assert traj.n_plus(20.0) - traj.n_minus(20.0) == traj.displacement(20.0)


def test_frame_rejects_bad_input():
    with pytest.raises(ValueError):
        evolve_lagrangian(1.0, 5.0, SeedSpec(1), 10)
    bad = np.zeros(21, dtype=np.int8)
    with pytest.raises(ValueError):
        evolve_lagrangian(0.5, 5.0, SeedSpec(1), 10, initial=bad)
    assert issubclass(FrameInvariantError, RuntimeError)


def test_frame_displacement_is_centred():
    w = window_halfwidth(64.0, 1e-9)
    base = SeedSpec(20240501).child(Purpose.TEST, 1)
    z = np.array([evolve_lagrangian(0.5, 64.0, base.replicate(i), w).displacement(64.0) for i in range(4000)])
    se = z.std(ddof=1) / math.sqrt(z.size)
    assert abs(z.mean()) < 3 * se


def test_frame_martingale_has_mean_zero():
    w = 40
    m = np.array([evolve_lagrangian(0.5, 8.0, SeedSpec(i), w).martingale(8.0) for i in range(2000)])
    assert abs(m.mean()) < 3 * m.std(ddof=1) / math.sqrt(m.size)
