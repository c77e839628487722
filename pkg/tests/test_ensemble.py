import math
import random

import numpy as np
import pytest

from sseplab.config import ExperimentSpec
from sseplab.ensemble import (
    ResampleRateError,
    coupled_window_check,
    run_ensemble,
    simulate_replicate,
    spec_window,
    summarize,
)
from sseplab.stats import max_moment_scaling, modulus_diagnostic

SMALL = ExperimentSpec(rho=0.5, lam=16.0, seed=3, replicates=12, retain_paths=True)


def test_single_replicate_counts():
    s = run_ensemble(SMALL.with_(replicates=1))
    assert all(acc.n == 1 for accs in s.accumulators.values() for acc in accs)


def test_same_spec_bit_identical():
    a, b = run_ensemble(SMALL), run_ensemble(SMALL)
    for name in a.rows:
        assert a.rows[name].tobytes() == b.rows[name].tobytes()
        assert [(x.mean, x.sums) for x in a.accumulators[name]] == [(x.mean, x.sums) for x in b.accumulators[name]]


def test_completion_order_does_not_matter():
    window = spec_window(SMALL)
    results = [simulate_replicate(SMALL, window, i) for i in range(SMALL.replicates)]
    shuffled = results[:]
    random.Random(4).shuffle(shuffled)
    a = summarize(SMALL, window.half_width, results)
    b = summarize(SMALL, window.half_width, shuffled)
    for name in a.rows:
        assert [(x.mean, x.sums) for x in a.accumulators[name]] == [(x.mean, x.sums) for x in b.accumulators[name]]


def test_worker_pool_matches_serial():
    a = run_ensemble(SMALL, workers=1, chunk=5)
    b = run_ensemble(SMALL, workers=2, chunk=5)
    assert all(a.rows[k].tobytes() == b.rows[k].tobytes() for k in a.rows)


def test_every_identity_audited():
    s = run_ensemble(SMALL)
    assert np.all(s.checks == 7 * len(SMALL.t_grid))
    assert s.paths["J"].shape == (SMALL.replicates, 17)


def test_resample_rate_limit():
    sparse = ExperimentSpec(rho=0.05, lam=1.0, seed=1, replicates=50, half_width=4)
    with pytest.raises(ResampleRateError):
        run_ensemble(sparse)


def test_coupled_window_agrees_at_light_cone():
    spec = ExperimentSpec(rho=0.5, lam=64.0, seed=20240501, replicates=50, window_delta=1e-9)
    report = coupled_window_check(spec)
    assert report.agrees, report.disagreements


def test_coupled_window_trivial_horizon():
    spec = ExperimentSpec(rho=0.5, lam=1e-12, seed=2, replicates=5)
    assert coupled_window_check(spec).agrees


def test_coupled_window_negative_control():
    spec = ExperimentSpec(rho=0.5, lam=64.0, seed=20240501, replicates=50)
    report = coupled_window_check(spec, half_width=math.ceil(64 / 4))
    assert not report.agrees


# diagnostics on the desk ensemble


def test_max_moment_start_and_nesting(acceptance_ctx):
    paths = acceptance_ctx.desk.paths["J"]
    fit = max_moment_scaling(paths, p=6, m_grid=(1, 16, 32, 64, 128, 256))
    assert fit.values[0] == pytest.approx(np.mean(paths[:, 1].astype(float) ** 6))
    assert np.all(np.diff(fit.values) >= 0)


def test_modulus_decreases_with_delta(acceptance_ctx):
    paths = acceptance_ctx.desk.paths["J"]
    deltas = [1 / 4, 1 / 16, 1 / 64]
    rows = modulus_diagnostic(paths, 256, deltas, [0.5, 2.0])
    at = {eps: [r["prob"] for r in rows if r["eps"] == eps] for eps in (0.5, 2.0)}
    assert at[2.0] == sorted(at[2.0], reverse=True)
    assert at[0.5][0] > at[0.5][1] > at[0.5][2]


def test_modulus_whole_interval_and_smallest_gap(acceptance_ctx):
    paths = acceptance_ctx.desk.paths["J"].astype(float)
    whole = modulus_diagnostic(paths, 256, [1.0], [1.0])[0]["prob"]
    rng_ = (paths.max(axis=1) - paths.min(axis=1)) * 256 ** (-0.25)
    assert whole == pytest.approx(np.mean(rng_ >= 1.0))
    assert modulus_diagnostic(paths, 256, [1 / 256], [2.0])[0]["prob"] < 0.01


def test_no_replicate_resampled(acceptance_ctx):
    assert acceptance_ctx.desk.resampled.mean() <= 0.01
