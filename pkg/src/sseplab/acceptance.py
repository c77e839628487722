"""The packaged acceptance suite.

Each criterion is a function of an :class:`AcceptanceContext` returning an
:class:`Outcome`.  The desk ensemble is read from ``rows.csv`` and its
companion files (simulated first if the run directory is empty); the other
ingredients are fresh oracle calls and small auxiliary ensembles.
"""

from __future__ import annotations

import filecmp
import math
import tempfile
from collections.abc import Callable
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from sseplab import io, oracle
from sseplab.config import ExperimentSpec
from sseplab.core import LatticeWindow, Purpose, SeedSpec, sample_config
from sseplab.dynamics import direct_exclusion, evolve_lagrangian
from sseplab.ensemble import EnsembleSummary, coupled_window_check, run_ensemble
from sseplab.graphical import generate_event_log, window_halfwidth
from sseplab.observables import NoTaggedParticle, current, tagged_start
from sseplab.stats import (
    TheoryConstants,
    chi_square_geometric,
    covariance_check,
    jittered_standardize,
    ks_one_sample,
    ks_two_sample,
    ks_two_sample_threshold,
    max_moment_scaling,
    tagged_current_gap,
    variance_scaling,
)

# tolerances, one per criterion
IDENTITY_REPLICATES = 1000
SLOPE_RANGE = (0.42, 0.58)
CONST_REL = {"J": 0.10, "X": 0.12, "K": 0.05}
K_BOUND_SE = 3.0
COV_FRACTIONS = (0.25, 0.5, 0.75, 1.0)
COV_REL, COV_SE = 0.15, 4.0
KS_MAX_D = 0.05
CROSSING_SE = 3.0
TWO_SITE_TOL = 1e-10
NEGCORR_TIMES = (0.5, 1.0, 2.0)
NEGCORR_MARGIN = -1e-12
MC_REPLICATES = 100_000
MC_TV = 0.02
MAX_MOMENT_SLOPE = 1.65
MAX_MOMENT_GRID = (16, 32, 64, 128, 256)
GAP_LAMBDAS = (64, 256)
GAP_REPLICATES = 2000
LAGRANGIAN_T = 64.0
LAGRANGIAN_REPLICATES = 2000
LAGRANGIAN_ALPHA = 0.01
CHI2_ALPHA = 1e-3
COUPLED_T = 64.0
COUPLED_REPLICATES = 50
N_BOOT = 200


@dataclass(frozen=True)
class Outcome:
    number: int
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} [{self.number:2d}] {self.name}: {self.detail}"


def ensure_run(spec: ExperimentSpec, out: Path, workers: int | None = 1) -> EnsembleSummary:
    """Read the run in ``out``, simulating it first if absent or for another spec."""
    out = Path(out)
    if (out / "rows.csv").exists() and (out / "spec.cfg").exists():
        stored = io.read_spec(out)
        if stored.with_(half_width=spec.half_width, output=spec.output, mode=spec.mode) == spec:
            return io.read_run(out)
    io.write_run(run_ensemble(spec, workers=workers), out)
    return io.read_run(out)


@dataclass(eq=False)
class AcceptanceContext:
    spec: ExperimentSpec
    out: Path
    workers: int | None = 1
    log: Callable[[str], None] = field(default=lambda msg: None)

    @cached_property
    def desk(self) -> EnsembleSummary:
        self.log(f"desk ensemble: {self.spec.replicates} replicates, lambda={self.spec.lam}")
        run = ensure_run(self.spec, self.out / "desk", self.workers)
        if run.paths is None:
            raise ValueError("the acceptance suite needs retain_paths = true")
        return run

    @cached_property
    def theory(self) -> TheoryConstants:
        return TheoryConstants(self.spec.rho)

    @cached_property
    def master(self) -> SeedSpec:
        return SeedSpec(self.spec.seed)

    def rng(self, index: int) -> np.random.Generator:
        return self.master.stream(Purpose.BOOTSTRAP, index).numpy_generator()

    def column_at(self, name: str, t: float) -> np.ndarray:
        """Observable at absolute time t: grid rows when t is a grid time, else the integer path."""
        hit = np.flatnonzero(np.isclose(self.desk.times, t))
        if hit.size:
            return self.desk.rows[name][:, hit[0]]
        if name in ("J", "X") and float(t).is_integer():
            return self.desk.paths[name][:, int(t)].astype(float)
        raise KeyError(f"{name} not recorded at t={t}")

    @cached_property
    def small(self) -> EnsembleSummary:
        """Auxiliary ensemble at lambda = 64 for the gap comparison."""
        spec = self.spec.with_(lam=float(GAP_LAMBDAS[0]), replicates=GAP_REPLICATES, retain_paths=True, half_width=None)
        self.log(f"auxiliary ensemble: {GAP_REPLICATES} replicates, lambda={GAP_LAMBDAS[0]}")
        return ensure_run(spec, self.out / f"lambda{GAP_LAMBDAS[0]}", self.workers)


# ---------------------------------------------------------------------------
# criteria


def identities(ctx: AcceptanceContext) -> Outcome:
    d = ctx.desk
    n_times = d.times.size
    expected = 7 * n_times * d.n
    audited = int(d.checks.sum())
    j, m, a = d.rows["J"], d.rows["M"], d.rows["A"]
    tol = 1e-9 * np.maximum(d.events, 1)[:, None]
    split_ok = bool(np.all(np.abs(j - (m + a)) <= tol))
    integral = all(np.array_equal(d.rows[k], np.round(d.rows[k])) for k in ("J", "X", "K"))
    enough = d.n >= IDENTITY_REPLICATES and d.times.max() >= 256
    passed = audited == expected and split_ok and integral and enough
    return Outcome(1, "pathwise identities", passed,
                   f"{audited}/{expected} checks over {d.n} replicates up to t={d.times.max():g}; "
                   f"J=M+A on rows {split_ok}; integer J,X,K {integral}")


def _scaling_window(ctx: AcceptanceContext) -> np.ndarray:
    return np.array([t for t in ctx.desk.times if 16 <= t <= 256])


def variance_slope(ctx: AcceptanceContext) -> Outcome:
    times = _scaling_window(ctx)
    data = np.column_stack([ctx.column_at("J", t) for t in times])
    fit = variance_scaling(times, data, n_boot=N_BOOT, rng=ctx.rng(2))
    lo, hi = SLOPE_RANGE
    return Outcome(2, "variance scaling of J", lo <= fit.slope <= hi,
                   f"slope {fit.slope:.4f} +- {fit.stderr:.4f} over t={times.tolist()}, need [{lo}, {hi}]")


def limiting_constants(ctx: AcceptanceContext) -> Outcome:
    t = 256.0
    scale = math.sqrt(t)
    th = ctx.theory
    values = {
        "J": (np.var(ctx.column_at("J", t), ddof=1) / scale, th.sigma2_j),
        "X": (np.var(ctx.column_at("X", t), ddof=1) / scale, th.sigma2_x),
        "K": (np.mean(ctx.column_at("K", t)) / scale, th.k_limit),
    }
    ok = {k: abs(v / ref - 1.0) <= CONST_REL[k] for k, (v, ref) in values.items()}
    detail = "; ".join(f"{k} {v:.4f} vs {ref:.6f} (ratio {v / ref:.3f}, +-{CONST_REL[k]:.0%})" for k, (v, ref) in values.items())
    return Outcome(3, "limiting constants at t=256", all(ok.values()), detail)


def k_bound(ctx: AcceptanceContext) -> Outcome:
    worst = []
    passed = True
    for t, acc in zip(ctx.desk.times, ctx.desk.accumulators["K"]):
        bound = math.sqrt(t) + K_BOUND_SE * acc.se_mean()
        passed &= acc.mean <= bound
        worst.append(f"t={t:g}: {acc.mean:.3f} <= {bound:.3f}")
    return Outcome(4, "E K(t) <= sqrt(t) + 3 SE", bool(passed), "; ".join(worst))


def covariance(ctx: AcceptanceContext) -> Outcome:
    lam = ctx.spec.lam
    scaled = np.column_stack([ctx.column_at("J", lam * f) for f in COV_FRACTIONS]) * lam ** (-0.25)
    entries = covariance_check(COV_FRACTIONS, scaled, ctx.theory.sigma2_j, n_boot=N_BOOT, rng=ctx.rng(5))
    bad = [e for e in entries if not e.within(COV_REL, COV_SE)]
    worst = max(entries, key=lambda e: abs(e.empirical / e.theory - 1.0))
    return Outcome(5, "fBM(1/4) covariance", not bad,
                   f"{len(entries) - len(bad)}/{len(entries)} pairs within max(15%, 4 SE); "
                   f"worst (t={worst.t}, s={worst.s}) {worst.empirical:.4f} vs {worst.theory:.4f}")


def normality(ctx: AcceptanceContext) -> Outcome:
    t = 256.0
    parts, passed = [], True
    for k, (name, s2) in enumerate((("J", ctx.theory.sigma2_j), ("X", ctx.theory.sigma2_x))):
        x = ctx.column_at(name, t)
        var = s2 * math.sqrt(t)
        # centred: X carries an O(1) offset from how the tagged particle is chosen
        z = jittered_standardize(x - x.mean(), var, ctx.master.stream(Purpose.JITTER, 2 * k).numpy_generator())
        raw = jittered_standardize(x, var, ctx.master.stream(Purpose.JITTER, 2 * k + 1).numpy_generator())
        d, p = ks_one_sample(z, ndtr)
        d_raw, _ = ks_one_sample(raw, ndtr)
        passed &= d < KS_MAX_D
        parts.append(f"{name}: D={d:.4f} (p={p:.3g}; uncentred D={d_raw:.4f}, mean {x.mean():+.3f})")
    return Outcome(6, "normality at t=256", bool(passed), "; ".join(parts))


def crossings(ctx: AcceptanceContext) -> Outcome:
    counts = ctx.desk.ak_counts.astype(float)
    n_i = counts.sum(axis=1)
    total = n_i.sum()
    parts, passed = [], True
    for col, label, target in ((0, "-1", 0.25), (1, "0", 0.5), (2, "+1", 0.25)):
        p = counts[:, col].sum() / total
        # ratio estimator; replicates are the independent units
        se = math.sqrt(np.sum((counts[:, col] - p * n_i) ** 2)) / total
        passed &= abs(p - target) <= CROSSING_SE * se
        parts.append(f"P(A={label}) {p:.4f} vs {target} (SE {se:.4f})")
    return Outcome(7, "crossing variables", bool(passed), f"{int(total)} crossings; " + "; ".join(parts))


def mc_current_pmf(n: int, rho: float, t: float, seed: SeedSpec) -> dict[int, float]:
    """Monte Carlo current pmf through the middle bond of a 4-site segment."""
    window = LatticeWindow.segment(4)
    counts: dict[int, int] = {}
    for i in range(n):
        s = seed.replicate(i)
        config0 = sample_config(window, rho, s.stream(Purpose.CONFIG, 0))
        log = generate_event_log(window, t, s)
        j = current(direct_exclusion(config0, log))(t)
        counts[j] = counts.get(j, 0) + 1
    return {k: v / n for k, v in sorted(counts.items())}


def oracle_exactness(ctx: AcceptanceContext) -> Outcome:
    gen = oracle.build_generator("exclusion-segment", 2, particles=1)
    p = oracle.uniformized_transition(gen, math.log(2.0)).p
    stay = float(p[gen.index((1, 0)), gen.index((1, 0))])
    two_site = abs(stay - 0.75) <= TWO_SITE_TOL
    margins = {t: oracle.check_negative_correlation(4, t).min_margin for t in NEGCORR_TIMES}
    negcorr = all(m >= NEGCORR_MARGIN for m in margins.values())
    exact = oracle.exact_current_distribution(4, ctx.spec.rho, 1.0)
    mc = mc_current_pmf(MC_REPLICATES, ctx.spec.rho, 1.0, ctx.master.child(Purpose.TEST, 8))
    keys = set(exact) | set(mc)
    tv = 0.5 * sum(abs(exact.get(k, 0.0) - mc.get(k, 0.0)) for k in keys)
    passed = two_site and negcorr and tv < MC_TV
    return Outcome(8, "oracle exactness", passed,
                   f"two-site stay {stay:.12f}; negcorr min margin "
                   + ", ".join(f"t={t}: {m:.2e}" for t, m in margins.items())
                   + f"; current pmf TV {tv:.4f} over {MC_REPLICATES} replicates")


def max_moment(ctx: AcceptanceContext) -> Outcome:
    fit = max_moment_scaling(ctx.desk.paths["J"], p=6, m_grid=MAX_MOMENT_GRID)
    return Outcome(9, "maximal sixth-moment scaling", fit.slope <= MAX_MOMENT_SLOPE,
                   f"slope {fit.slope:.4f}, need <= {MAX_MOMENT_SLOPE}")


def gap(ctx: AcceptanceContext) -> Outcome:
    rho = ctx.spec.rho
    big = ctx.desk.paths
    small = ctx.small.paths
    g_small = tagged_current_gap(small["X"][:GAP_REPLICATES], small["J"][:GAP_REPLICATES], GAP_LAMBDAS[0], rho)
    g_big = tagged_current_gap(big["X"][:GAP_REPLICATES], big["J"][:GAP_REPLICATES], ctx.spec.lam, rho)
    return Outcome(10, "tagged/current gap shrinks", g_big.median < g_small.median,
                   f"median {g_small.median:.4f} (q90 {g_small.q90:.4f}) at lambda={GAP_LAMBDAS[0]} vs "
                   f"{g_big.median:.4f} (q90 {g_big.q90:.4f}) at lambda={ctx.spec.lam:g}")


def frame_initial(rho: float, half_width: int, seed: SeedSpec) -> np.ndarray:
    """Environment seen from the tagged particle, drawn as in the global construction.

    A Bernoulli configuration is sampled on a wider window and recentred on
    the largest occupied site <= 0, so the gap to its right is size-biased
    exactly as for the global tagged particle.
    """
    pad = 64
    window = LatticeWindow.symmetric(half_width + pad)
    for attempt in range(64):
        config = sample_config(window, rho, seed.stream(Purpose.LAGRANGIAN, 2 + attempt))
        try:
            x0 = tagged_start(config)
        except NoTaggedParticle:
            continue
        if x0 - half_width >= window.lo:
            start = x0 - half_width - window.lo
            return np.array(config.occupancy[start : start + 2 * half_width + 1], dtype=np.int8)
    raise NoTaggedParticle("could not place the frame")


def lagrangian(ctx: AcceptanceContext) -> Outcome:
    t = LAGRANGIAN_T
    n = LAGRANGIAN_REPLICATES
    w = window_halfwidth(t, ctx.spec.window_delta)
    base = ctx.master.child(Purpose.LAGRANGIAN, 0)
    z = np.empty(n)
    for i in range(n):
        s = base.replicate(i)
        z[i] = evolve_lagrangian(ctx.spec.rho, t, s, w, initial=frame_initial(ctx.spec.rho, w, s)).displacement(t)
    x = ctx.desk.paths["X"]
    glob = (x[:n, int(t)] - x[:n, 0]).astype(float)
    d, p = ks_two_sample(z, glob)
    crit = ks_two_sample_threshold(n, glob.size, LAGRANGIAN_ALPHA)
    return Outcome(11, "Lagrangian frame vs global tagged particle", d < crit,
                   f"two-sample D={d:.4f} (p={p:.3g}) vs threshold {crit:.4f} at alpha={LAGRANGIAN_ALPHA}; "
                   f"means {z.mean():+.3f} / {glob.mean():+.3f}")


def geometric_laws(ctx: AcceptanceContext) -> Outcome:
    rho = ctx.spec.rho
    spacings = ctx.desk.pooled_spacings
    _, dof_s, p_s = chi_square_geometric(spacings, rho)
    _, dof_x, p_x = chi_square_geometric(np.abs(ctx.desk.x0) + 1, rho)
    return Outcome(12, "spacings and initial position are geometric", p_s > CHI2_ALPHA and p_x > CHI2_ALPHA,
                   f"spacings at t={half_time(ctx):g}: p={p_s:.3g} ({dof_s} dof, n={spacings.size}); "
                   f"|X(0)|+1: p={p_x:.3g} ({dof_x} dof)")


def half_time(ctx: AcceptanceContext) -> float:
    times = ctx.desk.times
    return float(times[np.argmin(np.abs(times - 0.5 * times.max()))])


def determinism(ctx: AcceptanceContext) -> Outcome:
    stored = ctx.out / "desk" / "rows.csv"
    _ = ctx.desk  # the first run must exist before repeating it
    with tempfile.TemporaryDirectory() as tmp:
        ctx.log("determinism: repeating the desk simulation")
        io.write_rows(run_ensemble(ctx.spec, workers=ctx.workers), Path(tmp) / "rows.csv")
        same = filecmp.cmp(stored, Path(tmp) / "rows.csv", shallow=False)
    coupled_spec = ctx.spec.with_(lam=COUPLED_T / max(ctx.spec.t_grid), replicates=COUPLED_REPLICATES, window_delta=1e-9, half_width=None)
    report = coupled_window_check(coupled_spec)
    return Outcome(13, "determinism and window coupling", same and report.agrees,
                   f"rows.csv byte-identical {same}; window W={report.half_width} vs 2W: "
                   f"{len(report.disagreements)} disagreements over {report.replicates} replicates")


CRITERIA: tuple[Callable[[AcceptanceContext], Outcome], ...] = (
    identities,
    variance_slope,
    limiting_constants,
    k_bound,
    covariance,
    normality,
    crossings,
    oracle_exactness,
    max_moment,
    gap,
    lagrangian,
    geometric_laws,
    determinism,
)


def run_acceptance(ctx: AcceptanceContext, only: set[int] | None = None) -> list[Outcome]:
    outcomes = []
    for number, crit in enumerate(CRITERIA, start=1):
        if only is not None and number not in only:
            continue
        outcome = crit(ctx)
        ctx.log(outcome.line())
        outcomes.append(outcome)
    return outcomes

