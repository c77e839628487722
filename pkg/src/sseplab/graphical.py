"""Harris stirring construction on a finite window.

Every bond (x, x+1) carries a rate-1/2 Poisson clock whose k-th gap is draw
number k of the bond's own stream.  Rings are merged lazily through a binary
heap keyed by (time, bond), which gives a deterministic total order and makes
each bond's ring times independent of the window size.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from numba import njit

from sseplab import _hash
from sseplab.core import LatticeWindow, Purpose, SeedSpec

RING_RATE = 0.5


def window_halfwidth(t_max: float, delta: float) -> int:
    """Half-width making influence from outside the window improbable.

    Returns the smallest W with 2 exp(W - t - W ln(W/t)) < delta plus a
    safety margin of ceil(6 sqrt(t + 1)) + 10.
    """
    if t_max < 0:
        raise ValueError("t_max must be nonnegative")
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    margin = math.ceil(6.0 * math.sqrt(t_max + 1.0)) + 10
    if t_max == 0:
        return margin
    w = max(1, math.floor(t_max))
    while chernoff_bound(w, t_max) >= delta:
        w += 1
    return w + margin


def chernoff_bound(w: float, t_max: float) -> float:
    """2 exp(W - t - W ln(W/t)); the Poisson(t) tail bound P(N >= W), doubled."""
    if t_max == 0:
        return 0.0
    if w <= t_max:
        return 2.0
    return 2.0 * math.exp(w - t_max - w * math.log(w / t_max))


def clock_key(seed: SeedSpec) -> np.uint64:
    return _hash.combine_scalar(seed.root, np.int64(int(Purpose.CLOCK)))


def next_ring(bond: int, k: int, seed: SeedSpec) -> float:
    """Time of the k-th ring (k >= 1) on bond (bond, bond+1)."""
    if k < 1:
        raise ValueError("ring ordinal starts at 1")
    return float(_ring_time(seed.key(Purpose.CLOCK, bond), k))


@njit(cache=True)
def _ring_time(bond_key, k):
    t = 0.0
    for j in range(1, k + 1):
        t += _hash.exponential(bond_key, j, RING_RATE)
    return t


@njit(cache=True)
def _heap_less(t_a, b_a, t_b, b_b):
    return t_a < t_b or (t_a == t_b and b_a < b_b)


@njit(cache=True)
def _sift_down(ht, hb, n, pos):
    t = ht[pos]
    b = hb[pos]
    while True:
        child = 2 * pos + 1
        if child >= n:
            break
        if child + 1 < n and _heap_less(ht[child + 1], hb[child + 1], ht[child], hb[child]):
            child += 1
        if _heap_less(ht[child], hb[child], t, b):
            ht[pos] = ht[child]
            hb[pos] = hb[child]
            pos = child
        else:
            break
    ht[pos] = t
    hb[pos] = b


@njit(cache=True)
def _generate_events(ckey, lo, hi, horizon):
    nb = hi - lo
    bond_keys = np.empty(nb, dtype=np.uint64)
    counts = np.zeros(nb, dtype=np.int64)
    ht = np.empty(nb, dtype=np.float64)
    hb = np.empty(nb, dtype=np.int64)
    n = 0
    for j in range(nb):
        bond_keys[j] = _hash.combine(ckey, lo + j)
        t1 = _hash.exponential(bond_keys[j], 1, RING_RATE)
        counts[j] = 1
        if t1 <= horizon:
            ht[n] = t1
            hb[n] = lo + j
            n += 1
    for pos in range(n // 2 - 1, -1, -1):
        _sift_down(ht, hb, n, pos)

    cap = int(nb * horizon * RING_RATE * 1.1) + 64
    times = np.empty(cap, dtype=np.float64)
    bonds = np.empty(cap, dtype=np.int64)
    m = 0
    while n > 0:
        t = ht[0]
        b = hb[0]
        if m == cap:
            cap *= 2
            nt = np.empty(cap, dtype=np.float64)
            nbd = np.empty(cap, dtype=np.int64)
            nt[:m] = times[:m]
            nbd[:m] = bonds[:m]
            times = nt
            bonds = nbd
        times[m] = t
        bonds[m] = b
        m += 1
        j = b - lo
        counts[j] += 1
        tn = t + _hash.exponential(bond_keys[j], counts[j], RING_RATE)
        if tn <= horizon:
            ht[0] = tn
        else:
            n -= 1
            ht[0] = ht[n]
            hb[0] = hb[n]
        if n > 0:
            _sift_down(ht, hb, n, 0)
    return times[:m].copy(), bonds[:m].copy()


@njit(cache=True)
def _apply_swaps(label_at, bond_idx, start, stop):
    for e in range(start, stop):
        i = bond_idx[e]
        tmp = label_at[i]
        label_at[i] = label_at[i + 1]
        label_at[i + 1] = tmp


@njit(cache=True)
def _snapshots(n_sites, bond_idx, every):
    n_ev = bond_idx.shape[0]
    n_snap = n_ev // every + 1
    snaps = np.empty((n_snap, n_sites), dtype=np.int32)
    cur = np.arange(n_sites).astype(np.int32)
    snaps[0] = cur
    for s in range(1, n_snap):
        _apply_swaps(cur, bond_idx, (s - 1) * every, s * every)
        snaps[s] = cur
    return snaps


@dataclass(frozen=True, eq=False)
class EventLog:
    """Time-ordered rings on a window; ``bonds[e]`` is the left site of ring e."""

    window: LatticeWindow
    horizon: float
    times: np.ndarray = field(repr=False)
    bonds: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return int(self.times.shape[0])

    @cached_property
    def bond_index(self) -> np.ndarray:
        """Array index of the left site of each ring."""
        return self.bonds - self.window.lo

    def count_until(self, t: float) -> int:
        """Number of rings with time <= t."""
        return int(np.searchsorted(self.times, t, side="right"))

    def rings_on(self, bond: int) -> np.ndarray:
        return self.times[self.bonds == bond]

    def dump(self, path: str | Path) -> None:
        """Little-endian binary dump: uint64 count, then (float64, int32) pairs."""
        rec = np.empty(len(self), dtype=np.dtype([("t", "<f8"), ("b", "<i4")]))
        rec["t"] = self.times
        rec["b"] = self.bonds
        with open(path, "wb") as fh:
            fh.write(struct.pack("<Q", len(self)))
            fh.write(rec.tobytes())

    @classmethod
    def load(cls, path: str | Path, window: LatticeWindow, horizon: float) -> EventLog:
        data = Path(path).read_bytes()
        (count,) = struct.unpack_from("<Q", data, 0)
        rec = np.frombuffer(data, dtype=np.dtype([("t", "<f8"), ("b", "<i4")]), offset=8, count=count)
        return cls(window, horizon, rec["t"].copy(), rec["b"].astype(np.int64))


def generate_event_log(window: LatticeWindow, horizon: float, seed: SeedSpec) -> EventLog:
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    times, bonds = _generate_events(clock_key(seed), window.lo, window.hi, float(horizon))
    return EventLog(window, float(horizon), times, bonds)


@dataclass(frozen=True, eq=False)
class StirringTrajectory:
    """Permutation-valued stirring process with sqrt-spaced snapshots.

    ``inverse(t)[x - lo]`` is the label (initial site) of the particle at x;
    ``forward(t)[i - lo]`` is the position of label i.
    """

    log: EventLog
    every: int
    snapshots: np.ndarray = field(repr=False)

    @property
    def window(self) -> LatticeWindow:
        return self.log.window

    @property
    def horizon(self) -> float:
        return self.log.horizon

    def _label_index_at(self, t: float) -> np.ndarray:
        if t > self.horizon:
            raise ValueError(f"query time {t} beyond horizon {self.horizon}")
        n = self.log.count_until(t)
        s = n // self.every
        cur = self.snapshots[s].copy()
        _apply_swaps(cur, self.log.bond_index, s * self.every, n)
        return cur

    def inverse(self, t: float) -> np.ndarray:
        """Site -> label map at time t, as an array over window sites."""
        return self._label_index_at(t).astype(np.int64) + self.window.lo

    def forward(self, t: float) -> np.ndarray:
        """Label -> site map at time t, as an array over labels lo..hi."""
        inv = self._label_index_at(t)
        fwd = np.empty_like(inv)
        fwd[inv] = np.arange(inv.shape[0], dtype=inv.dtype)
        return fwd.astype(np.int64) + self.window.lo

    def position(self, label: int, t: float) -> int:
        return int(self.forward(t)[self.window.index(label)])


def trajectory_from_log(log: EventLog) -> StirringTrajectory:
    every = max(1, math.ceil(math.sqrt(len(log))))
    snaps = _snapshots(log.window.n_sites, log.bond_index, every)
    return StirringTrajectory(log, every, snaps)


def evolve_stirring(window: LatticeWindow, horizon: float, seed: SeedSpec) -> StirringTrajectory:
    return trajectory_from_log(generate_event_log(window, horizon, seed))
