"""Replicate pipeline and ensemble orchestration.

Each replicate is a pure function of (spec, replicate index): streams are
derived from the master seed and the index, so results do not depend on the
worker that ran them or the order in which they finished.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from sseplab.config import ExperimentSpec
from sseplab.core import LatticeWindow, Purpose, SeedSpec, sample_config
from sseplab.dynamics import direct_exclusion, exclusion_from_stirring
from sseplab.graphical import evolve_stirring, window_halfwidth
from sseplab.observables import (
    IdentityViolation,
    NoTaggedParticle,
    _crossing_from_forward,
    current_and_decomposition,
    tagged_path,
    tagged_start,
)
from sseplab.stats import MomentAccumulator, merge_tree

OBSERVABLES = ("J", "X", "K", "M", "A")
MAX_ATTEMPTS = 64
MAX_RESAMPLE_RATE = 0.01
N_SPACINGS = 10  # spacings d_i for 1 <= |i| <= N_SPACINGS


class ResampleRateError(RuntimeError):
    pass


@dataclass(eq=False)
class ReplicateResult:
    index: int
    attempts: int
    events: int
    grid: np.ndarray  # (len(OBSERVABLES), n_times)
    x0: int
    ak_counts: np.ndarray  # counts of A_k = -1, 0, +1 at the last grid time
    spacings: np.ndarray  # d_i at the spacing time, i = -N..-1, 1..N
    checks: int
    j_path: np.ndarray | None = None
    x_path: np.ndarray | None = None

    @property
    def resampled(self) -> bool:
        return self.attempts > 0


def spec_window(spec: ExperimentSpec) -> LatticeWindow:
    w = spec.half_width if spec.half_width is not None else window_halfwidth(spec.horizon, spec.window_delta)
    return LatticeWindow.symmetric(w)


def spacing_time(spec: ExperimentSpec) -> float:
    """The grid time closest to half the horizon."""
    times = np.array(spec.grid_times)
    return float(times[np.argmin(np.abs(times - 0.5 * spec.horizon))])


def simulate_replicate(spec: ExperimentSpec, window: LatticeWindow, index: int) -> ReplicateResult:
    """Simulate one replicate, evaluate observables on the grid and audit every pathwise identity."""
    master = SeedSpec(spec.seed)
    for attempt in range(MAX_ATTEMPTS):
        seed = master.replicate(index, attempt)
        config0 = sample_config(window, spec.rho, seed.stream(Purpose.CONFIG, 0))
        try:
            x0 = tagged_start(config0)
        except NoTaggedParticle:
            continue
        break
    else:
        raise NoTaggedParticle(f"replicate {index}: no tagged particle after {MAX_ATTEMPTS} attempts")

    stirring = evolve_stirring(window, spec.horizon, seed)
    direct = direct_exclusion(config0, stirring.log)
    stirred = exclusion_from_stirring(config0, stirring)
    cur, dec = current_and_decomposition(direct)
    tag = tagged_path(direct, stirring, config0)

    times = np.array(spec.grid_times)
    j = cur.values(times)
    n_plus, n_minus = cur.n_plus(times), cur.n_minus(times)
    a = dec.additive(times)
    m = j - a
    x = tag.values(times)
    k = np.empty(times.size, dtype=np.int64)
    checks = 0
    t_space = spacing_time(spec)
    spacings = np.zeros(0, dtype=np.int64)
    ak_counts = np.zeros(3, dtype=np.int64)

    def fail(what: str, t: float) -> IdentityViolation:
        return IdentityViolation(f"replicate {index} (attempt {attempt}), t={t}: {what}")

    for g, t in enumerate(times):
        occ = direct.at(t)
        if not np.array_equal(occ, stirred.at(t)):
            raise fail("stirring and direct exclusion disagree", t)
        if j[g] != n_plus[g] - n_minus[g]:
            raise fail("J != N+ - N-", t)
        if abs(j[g] - (m[g] + a[g])) > 1e-9 * max(len(stirring.log), 1):
            raise fail("J != M + A", t)
        cv = _crossing_from_forward(stirring.forward(t), config0)
        if cv.k_plus != cv.k_minus:
            raise fail(f"K+ = {cv.k_plus} != K- = {cv.k_minus}", t)
        if cv.total != j[g]:
            raise fail(f"sum of A_k = {cv.total} != J = {j[g]}", t)
        sites = np.flatnonzero(occ) + window.lo
        if sites.size > 1 and np.any(np.diff(sites) < 1):
            raise fail("labels not strictly increasing", t)
        base = int(np.count_nonzero(sites <= 0)) - 1
        pos = base + int(j[g])
        if not 0 <= pos < sites.size or sites[pos] != x[g]:
            raise fail(f"X = {x[g]} is not Y_J with J = {j[g]}", t)
        checks += 7
        k[g] = cv.k_plus
        if g == times.size - 1:
            ak = cv.a
            ak_counts = np.array([np.count_nonzero(ak == -1), np.count_nonzero(ak == 0), np.count_nonzero(ak == 1)])
        if t == t_space:
            idx = np.concatenate((np.arange(-N_SPACINGS, 0), np.arange(1, N_SPACINGS + 1)))
            if base + idx.min() >= 0 and base + idx.max() + 1 < sites.size:
                spacings = sites[base + idx + 1] - sites[base + idx]

    grid = np.vstack([j, x, k, m, a]).astype(np.float64)
    result = ReplicateResult(index, attempt, len(stirring.log), grid, x0, ak_counts, spacings, checks)
    if spec.retain_paths:
        steps = np.arange(0, int(math.floor(spec.horizon)) + 1, dtype=np.float64)
        result.j_path = cur.values(steps).astype(np.int32)
        result.x_path = tag.values(steps).astype(np.int32)
    return result


def _run_chunk(args) -> list[ReplicateResult]:
    spec, window, indices = args
    return [simulate_replicate(spec, window, i) for i in indices]


@dataclass(eq=False)
class EnsembleSummary:
    """Per-grid-time moment accumulators plus the retained per-replicate data."""

    spec: ExperimentSpec
    half_width: int
    times: np.ndarray
    accumulators: dict[str, list[MomentAccumulator]]
    rows: dict[str, np.ndarray] = field(repr=False)  # observable -> (N, n_times)
    attempts: np.ndarray = field(repr=False)
    x0: np.ndarray = field(repr=False)
    ak_counts: np.ndarray = field(repr=False)  # (N, 3): A_k = -1, 0, +1
    spacings: np.ndarray = field(repr=False)  # (N, 2 * N_SPACINGS), 0 where unavailable
    events: np.ndarray = field(repr=False)
    checks: np.ndarray = field(repr=False)
    paths: dict[str, np.ndarray] | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return int(self.attempts.size)

    @property
    def resampled(self) -> np.ndarray:
        return self.attempts > 0

    @property
    def pooled_spacings(self) -> np.ndarray:
        return self.spacings[self.spacings > 0]

    def column(self, observable: str, t: float) -> np.ndarray:
        g = int(np.flatnonzero(np.isclose(self.times, t))[0])
        return self.rows[observable][:, g]

    def moments(self, observable: str) -> list[MomentAccumulator]:
        return self.accumulators[observable]


def summarize(spec: ExperimentSpec, half_width: int, results: list[ReplicateResult]) -> EnsembleSummary:
    """Order results by replicate index and merge accumulators by a fixed tree."""
    results = sorted(results, key=lambda r: r.index)
    times = np.array(spec.grid_times)
    rows = {name: np.array([r.grid[o] for r in results]).reshape(len(results), times.size) for o, name in enumerate(OBSERVABLES)}
    accs = accumulate(rows)
    paths = None
    if spec.retain_paths and results:
        paths = {"J": np.array([r.j_path for r in results]), "X": np.array([r.x_path for r in results])}
    spacings = np.zeros((len(results), 2 * N_SPACINGS), dtype=np.int64)
    for row, r in zip(spacings, results):
        if r.spacings.size:
            row[:] = r.spacings
    return EnsembleSummary(
        spec=spec,
        half_width=half_width,
        times=times,
        accumulators=accs,
        rows=rows,
        attempts=np.array([r.attempts for r in results], dtype=np.int64),
        x0=np.array([r.x0 for r in results], dtype=np.int64),
        ak_counts=np.array([r.ak_counts for r in results], dtype=np.int64).reshape(len(results), 3),
        spacings=spacings,
        events=np.array([r.events for r in results], dtype=np.int64),
        checks=np.array([r.checks for r in results], dtype=np.int64),
        paths=paths,
    )


def accumulate(rows: dict[str, np.ndarray]) -> dict[str, list[MomentAccumulator]]:
    """Per-time accumulators merged by the fixed replicate-index tree."""
    return {
        name: [merge_tree([MomentAccumulator(1, float(v), [0.0] * 7) for v in col[:, g]]) for g in range(col.shape[1])]
        for name, col in rows.items()
    }


def run_ensemble(spec: ExperimentSpec, workers: int | None = 1, chunk: int = 50) -> EnsembleSummary:
    window = spec_window(spec)
    indices = list(range(spec.replicates))
    chunks = [(spec, window, indices[i : i + chunk]) for i in range(0, len(indices), chunk)]
    workers = os.cpu_count() or 1 if workers is None else workers
    if workers > 1 and len(chunks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = [r for part in pool.map(_run_chunk, chunks) for r in part]
    else:
        results = [r for c in chunks for r in _run_chunk(c)]
    summary = summarize(spec, window.half_width, results)
    rate = summary.resampled.mean() if summary.n else 0.0
    if rate > MAX_RESAMPLE_RATE:
        raise ResampleRateError(f"{rate:.2%} of replicates needed resampling (limit {MAX_RESAMPLE_RATE:.0%})")
    return summary


@dataclass
class WindowCheckReport:
    half_width: int
    replicates: int
    disagreements: list[int] = field(default_factory=list)

    @property
    def agrees(self) -> bool:
        return not self.disagreements


def coupled_window_check(spec: ExperimentSpec, half_width: int | None = None) -> WindowCheckReport:
    """Re-run each replicate on windows W and 2W with the same master seed.

    Bond clocks and initial occupancies are keyed by site, so the two runs
    share every random input on the smaller window; J, X (integer times) and
    K (grid) must then agree unless influence crossed the window edge.
    """
    w = half_width if half_width is not None else spec_window(spec).half_width
    spec = spec.with_(retain_paths=True)
    small, big = LatticeWindow.symmetric(w), LatticeWindow.symmetric(2 * w)
    report = WindowCheckReport(w, spec.replicates)
    for i in range(spec.replicates):
        a = simulate_replicate(spec, small, i)
        b = simulate_replicate(spec, big, i)
        same = (
            np.array_equal(a.j_path, b.j_path)
            and np.array_equal(a.x_path, b.x_path)
            and np.array_equal(a.grid[OBSERVABLES.index("K")], b.grid[OBSERVABLES.index("K")])
        )
        if not same:
            report.disagreements.append(i)
    return report
