"""Estimators and tests confronting ensembles with the t^(1/4) limit laws."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from math import comb
from typing import Callable, Sequence

import numpy as np
from scipy import stats as sps

P_FLOOR = 1e-30
MAX_ORDER = 6


@dataclass(frozen=True)
class TheoryConstants:
    """Limiting constants of the current and the tagged particle at density rho."""

    rho: float

    def __post_init__(self) -> None:
        if not 0.0 < self.rho < 1.0:
            raise ValueError("limiting constants need 0 < rho < 1")

    @property
    def sigma2_j(self) -> float:
        return math.sqrt(2.0 / math.pi) * (1.0 - self.rho) * self.rho

    @property
    def sigma2_x(self) -> float:
        return math.sqrt(2.0 / math.pi) * (1.0 - self.rho) / self.rho

    @property
    def k_limit(self) -> float:
        return 1.0 / math.sqrt(2.0 * math.pi)

    @staticmethod
    def fbm_cov(t: float, s: float, sigma2: float) -> float:
        """(sigma2 / 2)(sqrt t + sqrt s - sqrt(t - s)), evaluated for t >= s."""
        if t < s:
            raise ValueError("fbm_cov is evaluated for ordered pairs t >= s")
        return 0.5 * sigma2 * (math.sqrt(t) + math.sqrt(s) - math.sqrt(t - s))


# ---------------------------------------------------------------------------
# streaming moments


@dataclass
class MomentAccumulator:
    """Count, mean and central power sums sum (x - mean)^p for p = 2..6.

    ``merge`` uses the pairwise update for arbitrary-order central sums, so
    per-replicate accumulators can be combined in any fixed tree.
    """

    n: int = 0
    mean: float = 0.0
    sums: list[float] = field(default_factory=lambda: [0.0] * (MAX_ORDER + 1))

    @classmethod
    def of(cls, values) -> MomentAccumulator:
        acc = cls()
        for v in np.asarray(values, dtype=float).ravel():
            acc.push(float(v))
        return acc

    def push(self, x: float) -> None:
        self.merge(MomentAccumulator(1, float(x), [0.0] * (MAX_ORDER + 1)))

    def merge(self, other: MomentAccumulator) -> MomentAccumulator:
        """Fold ``other`` into self in place and return self."""
        if other.n == 0:
            return self
        if self.n == 0:
            self.n, self.mean, self.sums = other.n, other.mean, list(other.sums)
            return self
        na, nb = self.n, other.n
        n = na + nb
        delta = other.mean - self.mean
        a, b = self.sums, other.sums
        new = [0.0] * (MAX_ORDER + 1)
        for p in range(2, MAX_ORDER + 1):
            acc = a[p] + b[p]
            for k in range(1, p - 1):
                acc += comb(p, k) * (
                    a[p - k] * (-nb * delta / n) ** k + b[p - k] * (na * delta / n) ** k
                )
            acc += (na * nb * delta / n) ** p * (1.0 / nb ** (p - 1) - (-1.0 / na) ** (p - 1))
            new[p] = acc
        self.n = n
        self.mean = self.mean + delta * nb / n
        self.sums = new
        return self

    def variance(self) -> float:
        """Unbiased sample variance."""
        return self.sums[2] / (self.n - 1) if self.n > 1 else math.nan

    def central_moment(self, p: int) -> float:
        return self.sums[p] / self.n if self.n else math.nan

    def se_mean(self) -> float:
        return math.sqrt(self.variance() / self.n) if self.n > 1 else math.nan

    def se_variance(self) -> float:
        """Large-sample standard error of the sample variance."""
        if self.n < 4:
            return math.nan
        m4 = self.central_moment(4)
        s2 = self.variance()
        return math.sqrt(max(m4 - s2 * s2 * (self.n - 3) / (self.n - 1), 0.0) / self.n)


def merge_tree(accs: Sequence[MomentAccumulator]) -> MomentAccumulator:
    """Pairwise merge in index order: ((0,1),(2,3)), ... until one remains."""
    level = [MomentAccumulator(a.n, a.mean, list(a.sums)) for a in accs]
    if not level:
        return MomentAccumulator()
    while len(level) > 1:
        nxt = []
        for i in range(0, len(level) - 1, 2):
            nxt.append(level[i].merge(level[i + 1]))
        if len(level) % 2:
            nxt.append(level[-1])
        level = nxt
    return level[0]


# ---------------------------------------------------------------------------
# goodness of fit


def kolmogorov_sf(x: float) -> float:
    """P(K > x) for the Kolmogorov distribution, 2 sum (-1)^(k-1) exp(-2 k^2 x^2)."""
    if x <= 0:
        return 1.0
    if x < 0.2:
        # series converges too slowly; the tail probability is 1 to double precision
        return 1.0
    total = 0.0
    k = 1
    while True:
        term = math.exp(-2.0 * k * k * x * x)
        total += term if k % 2 else -term
        if term < 1e-10:
            break
        k += 1
    return min(1.0, max(2.0 * total, P_FLOOR))


def ks_one_sample(sample, cdf: Callable[[np.ndarray], np.ndarray]) -> tuple[float, float]:
    """Exact D statistic against a continuous cdf and its asymptotic p-value."""
    x = np.sort(np.asarray(sample, dtype=float))
    n = x.size
    if n == 0:
        raise ValueError("empty sample")
    f = np.asarray(cdf(x), dtype=float)
    i = np.arange(1, n + 1)
    d = float(max(np.max(i / n - f), np.max(f - (i - 1) / n)))
    return d, kolmogorov_sf(math.sqrt(n) * d)


def ks_two_sample(a, b) -> tuple[float, float]:
    """Two-sample D statistic (ties handled by evaluating both ecdfs on the pooled values)."""
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    pooled = np.concatenate((a, b))
    fa = np.searchsorted(a, pooled, side="right") / a.size
    fb = np.searchsorted(b, pooled, side="right") / b.size
    d = float(np.max(np.abs(fa - fb)))
    en = math.sqrt(a.size * b.size / (a.size + b.size))
    return d, kolmogorov_sf(en * d)


def ks_two_sample_threshold(n: int, m: int, alpha: float) -> float:
    """Asymptotic critical value c(alpha) sqrt((n + m) / (n m))."""
    return math.sqrt(-0.5 * math.log(alpha / 2.0)) * math.sqrt((n + m) / (n * m))


def chi_square_geometric(sample, rho: float, min_expected: float = 5.0) -> tuple[float, int, float]:
    """Pearson chi-square of a {1,2,...} sample against Geometric(rho).

    Cells k = 1, 2, ... are kept while their expected count is at least
    ``min_expected``; the rest are pooled into one tail cell.
    """
    x = np.asarray(sample, dtype=np.int64)
    n = x.size
    if np.any(x < 1):
        raise ValueError("geometric sample must be supported on {1, 2, ...}")
    k = 1
    expected, observed = [], []
    while True:
        e = n * rho * (1.0 - rho) ** (k - 1)
        tail = n * (1.0 - rho) ** k
        if e < min_expected or tail < min_expected:
            break
        expected.append(e)
        observed.append(int(np.count_nonzero(x == k)))
        k += 1
    expected.append(n * (1.0 - rho) ** (k - 1))
    observed.append(int(np.count_nonzero(x >= k)))
    e = np.array(expected)
    o = np.array(observed)
    stat = float(np.sum((o - e) ** 2 / e))
    dof = len(e) - 1
    return stat, dof, float(max(sps.chi2.sf(stat, dof), P_FLOOR)) if dof > 0 else 1.0


def chi_square_bernoulli(occupancies, rho: float) -> tuple[float, float]:
    """Chi-square (1 dof) of 0/1 counts against Bernoulli(rho)."""
    x = np.asarray(occupancies).ravel()
    n = x.size
    ones = int(np.count_nonzero(x))
    e = np.array([n * (1 - rho), n * rho])
    o = np.array([n - ones, ones])
    stat = float(np.sum((o - e) ** 2 / e))
    return stat, float(max(sps.chi2.sf(stat, 1), P_FLOOR))


def jittered_standardize(values, variance: float, rng: np.random.Generator) -> np.ndarray:
    """(x + U) / sqrt(variance + 1/12) with U ~ Uniform(-1/2, 1/2).

    Spreads integer-valued data into a continuous law whose variance is
    ``variance + 1/12``, so a KS comparison against the normal cdf is not
    dominated by the lattice steps.
    """
    x = np.asarray(values, dtype=float)
    u = rng.uniform(-0.5, 0.5, size=x.shape)
    return (x + u) / math.sqrt(variance + 1.0 / 12.0)


# ---------------------------------------------------------------------------
# scaling and covariance


@dataclass(frozen=True)
class ScalingFit:
    slope: float
    stderr: float
    intercept: float


def loglog_slope(times, values) -> tuple[float, float]:
    lt = np.log(np.asarray(times, dtype=float))
    lv = np.log(np.asarray(values, dtype=float))
    slope, intercept = np.polyfit(lt, lv, 1)
    return float(slope), float(intercept)


def _bootstrap_indices(n: int, n_boot: int, rng: np.random.Generator):
    for _ in range(n_boot):
        yield rng.integers(0, n, size=n)


def variance_scaling(
    times,
    data: np.ndarray,
    n_boot: int = 200,
    rng: np.random.Generator | None = None,
) -> ScalingFit:
    """Slope of ln(sample variance) against ln t; ``data`` is replicates x times.

    The standard error is the spread of the slope over bootstrap resamples of
    replicates.
    """
    times = np.asarray(times, dtype=float)
    data = np.asarray(data, dtype=float)
    if times.size < 4 or times.max() / times.min() < 10 * (1 - 1e-12):
        raise ValueError("need at least 4 times spanning a decade")
    var = data.var(axis=0, ddof=1)
    if np.any(var <= 0):
        raise ValueError("degenerate variance")
    slope, intercept = loglog_slope(times, var)
    rng = np.random.default_rng(0) if rng is None else rng
    boots = []
    for idx in _bootstrap_indices(data.shape[0], n_boot, rng):
        v = data[idx].var(axis=0, ddof=1)
        if np.all(v > 0):
            boots.append(loglog_slope(times, v)[0])
    return ScalingFit(slope, float(np.std(boots, ddof=1)), intercept)


@dataclass(frozen=True)
class CovarianceEntry:
    t: float
    s: float
    empirical: float
    theory: float
    se: float

    def within(self, rel: float, n_se: float) -> bool:
        return abs(self.empirical - self.theory) <= max(rel * abs(self.theory), n_se * self.se)


def covariance_check(
    fractions,
    scaled: np.ndarray,
    sigma2: float,
    n_boot: int = 200,
    rng: np.random.Generator | None = None,
) -> list[CovarianceEntry]:
    """Empirical covariance of the rescaled process at ordered pairs t >= s.

    ``scaled[:, i]`` holds lambda^(-1/4) J(lambda * fractions[i]) per replicate.
    """
    fr = np.asarray(fractions, dtype=float)
    x = np.asarray(scaled, dtype=float)
    rng = np.random.default_rng(0) if rng is None else rng
    full = np.cov(x, rowvar=False, ddof=1)
    boots = np.array([np.cov(x[idx], rowvar=False, ddof=1) for idx in _bootstrap_indices(x.shape[0], n_boot, rng)])
    se = boots.std(axis=0, ddof=1)
    out = []
    for i in range(fr.size):
        for j in range(i + 1):
            t, s = fr[i], fr[j]
            if t < s:
                t, s = s, t
            out.append(CovarianceEntry(float(t), float(s), float(full[i, j]), TheoryConstants.fbm_cov(t, s, sigma2), float(se[i, j])))
    return out


def fbm_samples(times, n: int, rng: np.random.Generator, hurst: float = 0.25, sigma2: float = 1.0) -> np.ndarray:
    """Exact Gaussian vectors with covariance (sigma2/2)(t^2H + s^2H - |t-s|^2H)."""
    t = np.asarray(times, dtype=float)
    tt, ss = np.meshgrid(t, t, indexing="ij")
    h2 = 2.0 * hurst
    cov = 0.5 * sigma2 * (tt**h2 + ss**h2 - np.abs(tt - ss) ** h2)
    chol = np.linalg.cholesky(cov)
    return rng.standard_normal((n, t.size)) @ chol.T


# ---------------------------------------------------------------------------
# path diagnostics on integer-time paths (replicates x (0..m_max))


@dataclass(frozen=True)
class MaxMomentFit:
    m: np.ndarray
    values: np.ndarray
    slope: float


def max_moment_scaling(paths: np.ndarray, p: int = 6, m_grid=(16, 32, 64, 128, 256)) -> MaxMomentFit:
    """Slope of ln E[max_{1<=i<=m} |J(i)|^p] against ln m."""
    x = np.abs(np.asarray(paths, dtype=float))
    m = np.asarray(m_grid, dtype=np.int64)
    if m.max() >= x.shape[1]:
        raise ValueError("paths do not reach the largest m")
    running = np.maximum.accumulate(x[:, 1:] ** p, axis=1)  # column i-1 is max over 1..i
    values = running[:, m - 1].mean(axis=0)
    if m.size >= 2:
        slope, _ = loglog_slope(m, values)
    else:
        slope = math.nan
    return MaxMomentFit(m, values, slope)


def sup_modulus(paths: np.ndarray, lam: float, delta: float) -> np.ndarray:
    """sup_{|s-t|<delta} lambda^(-1/4)|J(floor(lambda t)) - J(floor(lambda s))| per path.

    Floors of points closer than delta differ by at most ceil(lambda delta),
    so the sup runs over integer lags up to that bound (capped at the path length).
    """
    x = np.asarray(paths, dtype=float)
    m = x.shape[1] - 1
    lag = min(int(math.ceil(lam * delta - 1e-12)), m)
    best = np.zeros(x.shape[0])
    for k in range(1, lag + 1):
        best = np.maximum(best, np.abs(x[:, k:] - x[:, :-k]).max(axis=1))
    return best * lam ** (-0.25)


def modulus_diagnostic(paths: np.ndarray, lam: float, deltas, eps_grid) -> list[dict]:
    """Empirical P(sup modulus >= eps) for every (delta, eps)."""
    rows = []
    for d in deltas:
        mod = sup_modulus(paths, lam, d)
        for eps in eps_grid:
            rows.append({"delta": float(d), "eps": float(eps), "prob": float(np.mean(mod >= eps))})
    return rows


@dataclass(frozen=True)
class GapSummary:
    lam: float
    gaps: np.ndarray = field(repr=False)

    @property
    def median(self) -> float:
        return float(np.median(self.gaps))

    @property
    def q90(self) -> float:
        return float(np.quantile(self.gaps, 0.9))


def tagged_current_gap(x_paths: np.ndarray, j_paths: np.ndarray, lam: float, rho: float) -> GapSummary:
    """sup over the path grid of lambda^(-1/4)|X - J / rho| per replicate."""
    x = np.asarray(x_paths, dtype=float)
    j = np.asarray(j_paths, dtype=float)
    gaps = np.max(np.abs(x - j / rho), axis=1) * lam ** (-0.25)
    return GapSummary(float(lam), gaps)


def bootstrap_se(statistic: Callable[[np.ndarray], float], data: np.ndarray, n_boot: int = 200, rng: np.random.Generator | None = None) -> float:
    rng = np.random.default_rng(0) if rng is None else rng
    data = np.asarray(data)
    vals = [statistic(data[idx]) for idx in _bootstrap_indices(data.shape[0], n_boot, rng)]
    return float(np.std(vals, ddof=1))
