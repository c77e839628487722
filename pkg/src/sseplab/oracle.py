"""Exact finite-state computations for small systems by uniformization.

Used as the golden reference for the Monte Carlo engine: exclusion on rings
and segments, the stirring permutation process, and a single rate-1 walker.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.special import gammaln
from scipy.stats import poisson

MAX_STATES = 100_000
DENSE_LIMIT = 1_000
MAX_TERMS = 1_000_000


class StateSpaceTooLarge(ValueError):
    pass


class ToleranceUnattainable(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class RateMatrix:
    """Generator on an enumerated state space; ``q`` is dense or CSR."""

    states: list
    q: np.ndarray | sparse.csr_matrix = field(repr=False)

    @property
    def size(self) -> int:
        return len(self.states)

    def dense(self) -> np.ndarray:
        return self.q.toarray() if sparse.issparse(self.q) else np.asarray(self.q)

    def index(self, state) -> int:
        return self._lookup[state]

    @cached_property
    def _lookup(self) -> dict:
        return {s: i for i, s in enumerate(self.states)}

    def exit_rates(self) -> np.ndarray:
        return -np.asarray(self.q.diagonal()).ravel()


@dataclass(frozen=True, eq=False)
class TransitionMatrix:
    p: np.ndarray = field(repr=False)
    truncation_error: float
    terms: int


def _assemble(states: list, transitions) -> RateMatrix:
    n = len(states)
    if n > MAX_STATES:
        raise StateSpaceTooLarge(f"{n} states exceeds the limit of {MAX_STATES}")
    lookup = {s: i for i, s in enumerate(states)}
    rows, cols, vals = [], [], []
    for a, s in enumerate(states):
        for target, rate in transitions(s):
            b = lookup[target]
            if b != a:
                rows.append(a)
                cols.append(b)
                vals.append(rate)
    q = sparse.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    q = q - sparse.diags(np.asarray(q.sum(axis=1)).ravel())
    q = q.tocsr()
    return RateMatrix(states, q.toarray() if n <= DENSE_LIMIT else q)


def _swap(state: tuple, x: int, y: int) -> tuple:
    s = list(state)
    s[x], s[y] = s[y], s[x]
    return tuple(s)


def _configs(n: int, particles: int | None) -> list[tuple[int, ...]]:
    # ordered by binary value, site 0 of the tuple as the most significant bit
    out = []
    for v in range(2**n):
        bits = tuple((v >> (n - 1 - k)) & 1 for k in range(n))
        if particles is None or sum(bits) == particles:
            out.append(bits)
    return out


def build_generator(model: str, n: int, particles: int | None = None) -> RateMatrix:
    """Generator for one of the small reference models.

    ``exclusion-ring``: n sites on a circle, fixed particle count.
    ``exclusion-segment``: n sites in a line (particle count optional).
    ``stirring-segment``: permutations of n labels; a state lists the label at each site.
    ``single-walker``: rate-1 symmetric walk on -n..n with suppressed boundary jumps;
    states are the integer positions.
    """
    if model in ("exclusion-ring", "exclusion-segment", "stirring-segment"):
        if model == "stirring-segment":
            if math.factorial(n) > MAX_STATES:
                raise StateSpaceTooLarge(f"{n}! states exceeds the limit of {MAX_STATES}")
        elif (2**n if particles is None else math.comb(n, particles)) > MAX_STATES:
            raise StateSpaceTooLarge(f"exclusion on {n} sites exceeds the limit of {MAX_STATES}")
    if model == "exclusion-ring":
        if particles is None:
            raise ValueError("exclusion-ring needs a particle count")
        bonds = [(x, (x + 1) % n) for x in range(n)]
        states = _configs(n, particles)
    elif model == "exclusion-segment":
        bonds = [(x, x + 1) for x in range(n - 1)]
        states = _configs(n, particles)
    elif model == "stirring-segment":
        bonds = [(x, x + 1) for x in range(n - 1)]
        states = list(itertools.permutations(range(n)))
    elif model == "single-walker":
        states = list(range(-n, n + 1))

        def walk(z):
            if z < n:
                yield z + 1, 0.5
            if z > -n:
                yield z - 1, 0.5

        return _assemble(states, walk)
    else:
        raise ValueError(f"unknown model {model!r}")

    def stir(s):
        for x, y in bonds:
            yield _swap(s, x, y), 0.5

    return _assemble(states, stir)


def _poisson_terms(mean: float, tol: float) -> tuple[np.ndarray, float]:
    """Poisson(mean) weights for k = 0..K with tail mass below tol."""
    if mean == 0.0:
        return np.array([1.0]), 0.0
    k_max = int(poisson.isf(tol, mean)) + 1
    while poisson.sf(k_max, mean) >= tol:
        k_max += 1 + k_max // 8
        if k_max > MAX_TERMS:
            raise ToleranceUnattainable(f"tail below {tol} needs more than {MAX_TERMS} terms")
    k = np.arange(k_max + 1)
    w = np.exp(-mean + k * math.log(mean) - gammaln(k + 1))
    return w, float(poisson.sf(k_max, mean))


def _uniformized(q, lam: float):
    n = q.shape[0]
    if sparse.issparse(q):
        return sparse.identity(n, format="csr") + q / lam
    return np.eye(n) + q / lam


def uniformized_transition(rates: RateMatrix, t: float, tol: float = 1e-13) -> TransitionMatrix:
    """P(t) = sum_k Poisson(k; Lambda t) S^k with S = I + Q / Lambda.

    The certified error is the dropped Poisson tail: every entry of the
    truncated sum is within that mass of the exact value, from below.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    if tol <= 0:
        raise ValueError("tol must be positive")
    n = rates.size
    lam = float(rates.exit_rates().max())
    if t == 0 or lam == 0:
        return TransitionMatrix(np.eye(n), 0.0, 0)
    w, tail = _poisson_terms(lam * t, tol)
    s = _uniformized(rates.q, lam)
    term = np.eye(n)
    p = w[0] * term
    for k in range(1, w.shape[0]):
        term = np.asarray(s @ term) if sparse.issparse(s) else term @ s
        p += w[k] * term
    return TransitionMatrix(p, tail, int(w.shape[0]))


def propagate(rates: RateMatrix, p0: np.ndarray, t: float, tol: float = 1e-13) -> tuple[np.ndarray, float]:
    """Row vector p0 P(t) without forming the full matrix."""
    lam = float(rates.exit_rates().max())
    p0 = np.asarray(p0, dtype=float)
    if t == 0 or lam == 0:
        return p0.copy(), 0.0
    w, tail = _poisson_terms(lam * t, tol)
    st = _uniformized(rates.q, lam).T
    v = p0.copy()
    out = w[0] * v
    for k in range(1, w.shape[0]):
        v = st @ v
        out += w[k] * v
    return np.asarray(out).ravel(), tail


# ---------------------------------------------------------------------------
# stirring law and derived checks


def stirring_law(n_sites: int, t: float, tol: float = 1e-14) -> tuple[list[tuple[int, ...]], np.ndarray]:
    """Exact law at time t of the site->label arrangement, started from the identity."""
    if n_sites > 5:
        raise StateSpaceTooLarge("exhaustive stirring checks are limited to 5 sites")
    gen = build_generator("stirring-segment", n_sites)
    p0 = np.zeros(gen.size)
    p0[gen.index(tuple(range(n_sites)))] = 1.0
    law, _ = propagate(gen, p0, t, tol)
    return gen.states, law


@dataclass
class NegCorrReport:
    n_sites: int
    t: float
    tol: float
    max_violation: float  # max over (T, A) of joint - product
    rows: list[dict] = field(default_factory=list)

    @property
    def holds(self) -> bool:
        return self.max_violation <= self.tol

    @property
    def min_margin(self) -> float:
        return -self.max_violation

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.DictWriter(fh, fieldnames=["size_T", "size_A", "pairs", "worst_margin", "worst_T", "worst_A"])
            wr.writeheader()
            wr.writerows(self.rows)


def _subsets(n: int):
    for r in range(n + 1):
        yield from itertools.combinations(range(n), r)


def check_negative_correlation(n_sites: int, t: float, tol: float = 1e-12) -> NegCorrReport:
    """P(xi^i in A for all i in T) <= prod_i P(xi^i in A), for every T and A.

    Labels and sites are both numbered 0..n-1.  Margins are product minus
    joint probability; a negative margin is a violation.
    """
    states, law = stirring_law(n_sites, t)
    # position of label i in each arrangement
    pos = np.empty((len(states), n_sites), dtype=np.int64)
    for k, s in enumerate(states):
        for site, label in enumerate(s):
            pos[k, label] = site
    worst: dict[tuple[int, int], dict] = {}
    max_violation = -math.inf
    for a_set in _subsets(n_sites):
        in_a = np.isin(pos, a_set)
        marg = law @ in_a
        for t_set in _subsets(n_sites):
            joint = float(law @ np.all(in_a[:, list(t_set)], axis=1)) if t_set else 1.0
            prod = float(np.prod(marg[list(t_set)])) if t_set else 1.0
            margin = prod - joint
            max_violation = max(max_violation, -margin)
            key = (len(t_set), len(a_set))
            row = worst.get(key)
            if row is None:
                worst[key] = row = {"size_T": key[0], "size_A": key[1], "pairs": 0, "worst_margin": math.inf}
            row["pairs"] += 1
            if margin < row["worst_margin"]:
                row.update(worst_margin=margin, worst_T=" ".join(map(str, t_set)), worst_A=" ".join(map(str, a_set)))
    rows = [worst[k] for k in sorted(worst)]
    return NegCorrReport(n_sites, t, tol, max_violation, rows)


def walker_distribution(t: float, truncation: int, tol: float = 1e-15) -> tuple[np.ndarray, np.ndarray]:
    """Law of the rate-1 symmetric walk at time t on -L..L (jumps past L suppressed)."""
    gen = build_generator("single-walker", truncation)
    p0 = np.zeros(gen.size)
    p0[truncation] = 1.0
    law, _ = propagate(gen, p0, t, tol)
    return np.arange(-truncation, truncation + 1), law


def default_truncation(t: float) -> int:
    return int(math.ceil(t + 12.0 * math.sqrt(t + 1.0))) + 20


def mean_positive_walk(t: float, truncation: int | None = None) -> float:
    """E[max(z(0, t), 0)] for the rate-1 symmetric walk started at 0."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t == 0:
        return 0.0
    truncation = default_truncation(t) if truncation is None else int(truncation)
    sites, law = walker_distribution(t, truncation)
    boundary = law[0] + law[-1]
    if boundary >= 1e-12:
        raise ValueError(f"truncation {truncation} too small: boundary mass {boundary:.3g}")
    return float(np.sum(np.maximum(sites, 0) * law))


def current_of(arrangement: tuple[int, ...], occupancy: tuple[int, ...], split: int) -> int:
    """Current across the bond between array positions split-1 and split.

    ``arrangement[site] = label``; labels < split started left of the bond.
    """
    j = 0
    for site, label in enumerate(arrangement):
        if occupancy[label]:
            if label < split <= site:
                j += 1
            elif site < split <= label:
                j -= 1
    return j


def exact_current_distribution(n_sites: int, rho: float, t: float) -> dict[int, float]:
    """Exact pmf of the current through the middle bond of an n-site segment.

    The segment is sites lo..lo+n-1 with the bond (0, 1) in the middle
    (``LatticeWindow.segment``); initial occupancies are Bernoulli(rho).
    """
    if not 0.0 <= rho <= 1.0:
        raise ValueError("rho must lie in [0, 1]")
    states, law = stirring_law(n_sites, t)
    split = (n_sites - 1) // 2 + 1  # array index of site 1
    pmf: dict[int, float] = {}
    for occ in itertools.product((0, 1), repeat=n_sites):
        k = sum(occ)
        weight = rho**k * (1.0 - rho) ** (n_sites - k)
        if weight == 0.0:
            continue
        for s, p in zip(states, law):
            j = current_of(s, occ, split)
            pmf[j] = pmf.get(j, 0.0) + weight * p
    return dict(sorted(pmf.items()))
