"""Pathwise observables at the origin bond (0, 1): current, its martingale
decomposition, stirring crossing counts, crossing variables and the tagged
particle with its particle labels and spacings."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from sseplab.core import Configuration
from sseplab.dynamics import OccupancyTrajectory, _piecewise_integral
from sseplab.graphical import EventLog, StirringTrajectory


class NoTaggedParticle(ValueError):
    """No occupied site <= 0 in the window; the replicate must be resampled."""


class IdentityViolation(AssertionError):
    """A pathwise identity failed."""


@njit(cache=True)
def _origin_scan(occ0, bond_idx, times, i0):
    """Replay occupancies; record origin-bond crossings and changes of eta(0) - eta(1)."""
    occ = occ0.copy()
    n_ev = bond_idx.shape[0]
    j_times = np.empty(64, dtype=np.float64)
    j_signs = np.empty(64, dtype=np.int64)
    nj = 0
    c_times = np.empty(64, dtype=np.float64)
    c_vals = np.empty(64, dtype=np.int64)
    c_times[0] = 0.0
    c_vals[0] = occ[i0] - occ[i0 + 1]
    nc = 1
    for e in range(n_ev):
        b = bond_idx[e]
        if b < i0 - 1 or b > i0 + 1:
            tmp = occ[b]
            occ[b] = occ[b + 1]
            occ[b + 1] = tmp
            continue
        if b == i0 and occ[b] != occ[b + 1]:
            if nj == j_times.shape[0]:
                j_times = np.concatenate((j_times, np.empty(nj, dtype=np.float64)))
                j_signs = np.concatenate((j_signs, np.empty(nj, dtype=np.int64)))
            j_times[nj] = times[e]
            j_signs[nj] = 1 if occ[b] == 1 else -1
            nj += 1
        tmp = occ[b]
        occ[b] = occ[b + 1]
        occ[b + 1] = tmp
        v = occ[i0] - occ[i0 + 1]
        if v != c_vals[nc - 1]:
            if nc == c_times.shape[0]:
                c_times = np.concatenate((c_times, np.empty(nc, dtype=np.float64)))
                c_vals = np.concatenate((c_vals, np.empty(nc, dtype=np.int64)))
            c_times[nc] = times[e]
            c_vals[nc] = v
            nc += 1
    return j_times[:nj].copy(), j_signs[:nj].copy(), c_times[:nc].copy(), c_vals[:nc].copy()


@njit(cache=True)
def _track_tagged(occ0, bond_idx, times, start):
    occ = occ0.copy()
    pos = start
    m_times = np.empty(64, dtype=np.float64)
    m_pos = np.empty(64, dtype=np.int64)
    m = 0
    for e in range(bond_idx.shape[0]):
        b = bond_idx[e]
        moved = False
        # a ring moves the tagged particle only onto an empty neighbour
        if b == pos and occ[b + 1] == 0:
            pos = b + 1
            moved = True
        elif b + 1 == pos and occ[b] == 0:
            pos = b
            moved = True
        tmp = occ[b]
        occ[b] = occ[b + 1]
        occ[b + 1] = tmp
        if moved:
            if m == m_times.shape[0]:
                m_times = np.concatenate((m_times, np.empty(m, dtype=np.float64)))
                m_pos = np.concatenate((m_pos, np.empty(m, dtype=np.int64)))
            m_times[m] = times[e]
            m_pos[m] = pos
            m += 1
    return m_times[:m].copy(), m_pos[:m].copy()


def _as_times(t):
    return np.atleast_1d(np.asarray(t, dtype=np.float64))


@dataclass(frozen=True, eq=False)
class CurrentPath:
    """Signed crossings of the bond (0, 1): +1 for 0 -> 1, -1 for 1 -> 0."""

    jump_times: np.ndarray = field(repr=False)
    jump_signs: np.ndarray = field(repr=False)

    def _count(self, t) -> np.ndarray:
        return np.searchsorted(self.jump_times, _as_times(t), side="right")

    def values(self, t) -> np.ndarray:
        """J at each time in ``t``."""
        cum = np.concatenate(([0], np.cumsum(self.jump_signs)))
        return cum[self._count(t)]

    def __call__(self, t: float) -> int:
        return int(self.values(t)[0])

    def n_plus(self, t) -> np.ndarray:
        cum = np.concatenate(([0], np.cumsum(self.jump_signs == 1)))
        return cum[self._count(t)]

    def n_minus(self, t) -> np.ndarray:
        cum = np.concatenate(([0], np.cumsum(self.jump_signs == -1)))
        return cum[self._count(t)]


@dataclass(frozen=True, eq=False)
class Decomposition:
    """J = M + A with A(t) = (1/2) int_0^t (eta_s(0) - eta_s(1)) ds.

    A is summed exactly over the intervals on which eta(0) - eta(1) is constant.
    """

    current: CurrentPath
    change_times: np.ndarray = field(repr=False)
    change_values: np.ndarray = field(repr=False)

    def additive(self, t) -> np.ndarray:
        return np.array([0.5 * _piecewise_integral(self.change_times, self.change_values, s) for s in _as_times(t)])

    def martingale(self, t) -> np.ndarray:
        return self.current.values(t) - self.additive(t)


@dataclass(frozen=True, eq=False)
class CrossingVariables:
    """Labels that crossed the origin bond by time t, and their initial occupancies."""

    k_plus: int
    k_minus: int
    left_labels: np.ndarray = field(repr=False)  # i_1 < ... < i_K <= 0
    right_labels: np.ndarray = field(repr=False)  # 0 < j_1 < ... < j_K
    b_plus: np.ndarray = field(repr=False)
    b_minus: np.ndarray = field(repr=False)

    @property
    def k(self) -> int:
        if self.k_plus != self.k_minus:
            raise IdentityViolation(f"K+ = {self.k_plus} differs from K- = {self.k_minus}")
        return self.k_plus

    @property
    def a(self) -> np.ndarray:
        return self.b_plus.astype(np.int64) - self.b_minus.astype(np.int64)

    @property
    def total(self) -> int:
        """Sum of A_k over k <= K (0 when K = 0)."""
        return int(self.a.sum())


def current(traj: OccupancyTrajectory, event_log: EventLog | None = None) -> CurrentPath:
    return _scan(traj, event_log)[0]


def decompose(current_path: CurrentPath, traj: OccupancyTrajectory, event_log: EventLog | None = None) -> Decomposition:
    _, ct, cv = _scan(traj, event_log)
    return Decomposition(current_path, ct, cv)


def _scan(traj: OccupancyTrajectory, event_log: EventLog | None):
    log = traj.log if event_log is None else event_log
    w = traj.window
    if not (w.contains(0) and w.contains(1)):
        raise ValueError("trajectory window does not contain the origin bond")
    jt, js, ct, cv = _origin_scan(traj.initial.occupancy, log.bond_index, log.times, w.index(0))
    return CurrentPath(jt, js), ct, cv


def current_and_decomposition(traj: OccupancyTrajectory) -> tuple[CurrentPath, Decomposition]:
    path, ct, cv = _scan(traj, None)
    return path, Decomposition(path, ct, cv)


def k_counts(stirring: StirringTrajectory, t: float) -> tuple[int, int]:
    """(K+, K-): labels from <= 0 now > 0, and labels from > 0 now <= 0."""
    return _k_counts(stirring.forward(t), stirring.window.lo)


def _k_counts(fwd: np.ndarray, lo: int) -> tuple[int, int]:
    split = -lo + 1  # labels lo..0 occupy indices [0, split)
    return int(np.count_nonzero(fwd[:split] > 0)), int(np.count_nonzero(fwd[split:] <= 0))


def crossing_variables(stirring: StirringTrajectory, config0: Configuration, t: float) -> CrossingVariables:
    return _crossing_from_forward(stirring.forward(t), config0)


def _crossing_from_forward(fwd: np.ndarray, config0: Configuration) -> CrossingVariables:
    lo = config0.window.lo
    split = -lo + 1
    left = np.flatnonzero(fwd[:split] > 0)
    right = split + np.flatnonzero(fwd[split:] <= 0)
    occ = config0.occupancy
    return CrossingVariables(
        k_plus=int(left.size),
        k_minus=int(right.size),
        left_labels=left + lo,
        right_labels=right + lo,
        b_plus=occ[left],
        b_minus=occ[right],
    )


def tagged_start(config0: Configuration) -> int:
    """Largest occupied site <= 0 (site 0 counts as left of 1/2)."""
    occ = config0.occupied_sites()
    left = occ[occ <= 0]
    if left.size == 0:
        raise NoTaggedParticle("no particle at any site <= 0")
    return int(left[-1])


@dataclass(frozen=True, eq=False)
class TaggedPath:
    """Tagged particle X(t) and particle labels Y_n(t).

    Y_n for n >= 1 is the n-th particle right of 1/2; Y_0, Y_{-1}, ... run
    leftwards from the first particle at or left of 0.
    """

    traj: OccupancyTrajectory
    x0: int
    move_times: np.ndarray = field(repr=False)
    move_positions: np.ndarray = field(repr=False)

    def values(self, t) -> np.ndarray:
        k = np.searchsorted(self.move_times, _as_times(t), side="right")
        pos = np.concatenate(([self.x0], self.move_positions))
        return pos[k]

    def __call__(self, t: float) -> int:
        return int(self.values(t)[0])

    def displacement(self, t) -> np.ndarray:
        return self.values(t) - self.x0

    def labels(self, t: float) -> tuple[np.ndarray, int]:
        """Sorted occupied sites at t and the array index of Y_0."""
        occ = np.flatnonzero(self.traj.at(t)) + self.traj.window.lo
        return occ, int(np.count_nonzero(occ <= 0)) - 1

    def y(self, n: int, t: float) -> int:
        occ, base = self.labels(t)
        i = base + n
        if not 0 <= i < occ.size:
            raise IndexError(f"label {n} not available in the window at time {t}")
        return int(occ[i])


def tagged_path(traj: OccupancyTrajectory, stirring: StirringTrajectory | None = None, config0: Configuration | None = None) -> TaggedPath:
    """Follow the tagged particle ring by ring through the shared clocks.

    Its stirring label is not usable here: labels swap across occupied
    neighbours, while the tagged particle may only step onto a hole.
    """
    config0 = traj.initial if config0 is None else config0
    log = traj.log if stirring is None else stirring.log
    x0 = tagged_start(config0)
    mt, mp = _track_tagged(config0.occupancy, log.bond_index, log.times, config0.window.index(x0))
    return TaggedPath(traj, x0, mt, mp + config0.window.lo)


def check_tagged_identity(path: TaggedPath, cur: CurrentPath, times) -> None:
    """Assert X(t) = Y_{J(t)}(t) and strictly ordered labels at each time."""
    for t, x, j in zip(_as_times(times), path.values(times), cur.values(times)):
        occ, base = path.labels(t)
        if occ.size > 1 and np.any(np.diff(occ) < 1):
            raise IdentityViolation(f"labels not strictly increasing at t={t}")
        i = base + int(j)
        if not 0 <= i < occ.size or occ[i] != x:
            raise IdentityViolation(f"X({t}) = {x} but Y_J with J = {j} is not at that site")


def spacings(traj: OccupancyTrajectory, t: float, indices) -> np.ndarray:
    """d_i(t) = Y_{i+1}(t) - Y_i(t) for each i in ``indices``; i = 0 is skipped."""
    occ = np.flatnonzero(traj.at(t)) + traj.window.lo
    base = int(np.count_nonzero(occ <= 0)) - 1
    idx = np.array([i for i in indices if i != 0], dtype=np.int64)
    if idx.size == 0:
        return idx
    lo_i, hi_i = base + idx.min(), base + idx.max() + 1
    if lo_i < 0 or hi_i >= occ.size:
        raise IndexError("spacing range exceeds the particles available in the window")
    return occ[base + idx + 1] - occ[base + idx]
