"""Occupancy dynamics driven by the stirring clocks, plus the tagged-particle frame process."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from sseplab import _hash
from sseplab.core import Configuration, LatticeWindow, Purpose, SeedSpec, check_density
from sseplab.graphical import EventLog, StirringTrajectory, _apply_swaps


class WindowMismatch(ValueError):
    pass


class OccupancyTrajectory:
    """eta_t over a window, queryable at any t up to the horizon."""

    initial: Configuration
    log: EventLog

    @property
    def window(self) -> LatticeWindow:
        return self.initial.window

    @property
    def horizon(self) -> float:
        return self.log.horizon

    def at(self, t: float) -> np.ndarray:
        raise NotImplementedError

    def config_at(self, t: float) -> Configuration:
        return Configuration(self.window, self.at(t))

    def __call__(self, t: float, x: int) -> int:
        return int(self.at(t)[self.window.index(x)])

    def particle_count(self, t: float) -> int:
        return int(self.at(t).sum())


class StirredOccupancy(OccupancyTrajectory):
    """eta_t(x) = 1 iff the label sitting at x at time t started on a particle."""

    def __init__(self, initial: Configuration, stirring: StirringTrajectory):
        self.initial = initial
        self.stirring = stirring
        self.log = stirring.log

    def at(self, t: float) -> np.ndarray:
        labels = self.stirring.inverse(t) - self.window.lo
        return self.initial.occupancy[labels]


class DirectOccupancy(OccupancyTrajectory):
    """eta_t obtained by exchanging occupancies ring by ring."""

    def __init__(self, initial: Configuration, log: EventLog):
        self.initial = initial
        self.log = log
        self.every = max(1, math.ceil(math.sqrt(len(log))))
        self.snapshots = _occupancy_snapshots(initial.occupancy, log.bond_index, self.every)

    def at(self, t: float) -> np.ndarray:
        if t > self.horizon:
            raise ValueError(f"query time {t} beyond horizon {self.horizon}")
        n = self.log.count_until(t)
        s = n // self.every
        cur = self.snapshots[s].copy()
        _apply_swaps(cur, self.log.bond_index, s * self.every, n)
        return cur


@njit(cache=True)
def _occupancy_snapshots(occ0, bond_idx, every):
    n_ev = bond_idx.shape[0]
    n_snap = n_ev // every + 1
    snaps = np.empty((n_snap, occ0.shape[0]), dtype=np.int8)
    cur = occ0.copy()
    snaps[0] = cur
    for s in range(1, n_snap):
        _apply_swaps(cur, bond_idx, (s - 1) * every, s * every)
        snaps[s] = cur
    return snaps


def exclusion_from_stirring(config0: Configuration, stirring: StirringTrajectory) -> StirredOccupancy:
    if config0.window != stirring.window:
        raise WindowMismatch(f"configuration window {config0.window} != stirring window {stirring.window}")
    return StirredOccupancy(config0, stirring)


def direct_exclusion(config0: Configuration, event_log: EventLog) -> DirectOccupancy:
    if config0.window != event_log.window:
        raise WindowMismatch(f"configuration window {config0.window} != event-log window {event_log.window}")
    return DirectOccupancy(config0, event_log)


# ---------------------------------------------------------------------------
# Lagrangian frame: the environment seen from the tagged particle.


class FrameInvariantError(RuntimeError):
    """The frame lost its particle at the origin."""


@njit(cache=True)
def _evolve_frame(key, rho, half_width, horizon, zeta0, exchanges):
    n = 2 * half_width + 1
    buf = zeta0.copy()
    off = 0  # buffer slot of frame site -half_width
    n_active = 2 * half_width - 2 if exchanges else 0
    n_choice = n_active + 2
    rate = 0.5 * n_choice
    counter = np.int64(0)

    cap = 256
    s_times = np.empty(cap, dtype=np.float64)
    s_signs = np.empty(cap, dtype=np.int64)
    n_shift = 0
    # piecewise-constant record of zeta(-1) - zeta(1)
    c_times = np.empty(cap, dtype=np.float64)
    c_vals = np.empty(cap, dtype=np.int64)
    c_times[0] = 0.0
    c_vals[0] = buf[(off + half_width - 1) % n] - buf[(off + half_width + 1) % n]
    n_change = 1
    ok = True

    t = 0.0
    while True:
        t += _hash.exponential(key, counter, rate)
        counter += 1
        if t > horizon:
            break
        c = int(_hash.uniform(key, counter) * n_choice)
        counter += 1
        if c >= n_choice:
            c = n_choice - 1
        if c < n_active:
            # frame bonds -W..W-1 skipping x = -1, 0
            x = -half_width + c
            if x >= -1:
                x += 2
            i = (off + x + half_width) % n
            j = (off + x + 1 + half_width) % n
            tmp = buf[i]
            buf[i] = buf[j]
            buf[j] = tmp
        else:
            step = 1 if c == n_active else -1
            target = (off + half_width + step) % n
            if buf[target] != 0:
                continue  # thinning: candidate rejected
            origin = (off + half_width) % n
            buf[target] = 1
            buf[origin] = 0
            off = (off + step) % n
            # the slot that wrapped around becomes the entering edge site
            edge = (off + n - 1) % n if step == 1 else off
            buf[edge] = 1 if _hash.uniform(key, counter) < rho else 0
            counter += 1
            if n_shift == s_times.shape[0]:
                s_times = np.concatenate((s_times, np.empty(s_times.shape[0], dtype=np.float64)))
                s_signs = np.concatenate((s_signs, np.empty(s_signs.shape[0], dtype=np.int64)))
            s_times[n_shift] = t
            s_signs[n_shift] = step
            n_shift += 1
        if buf[(off + half_width) % n] != 1:
            ok = False
            break
        v = buf[(off + half_width - 1) % n] - buf[(off + half_width + 1) % n]
        if v != c_vals[n_change - 1]:
            if n_change == c_times.shape[0]:
                c_times = np.concatenate((c_times, np.empty(c_times.shape[0], dtype=np.float64)))
                c_vals = np.concatenate((c_vals, np.empty(c_vals.shape[0], dtype=np.int64)))
            c_times[n_change] = t
            c_vals[n_change] = v
            n_change += 1

    final = np.empty(n, dtype=np.int8)
    for x in range(n):
        final[x] = buf[(off + x) % n]
    return ok, s_times[:n_shift].copy(), s_signs[:n_shift].copy(), c_times[:n_change].copy(), c_vals[:n_change].copy(), final


@dataclass(frozen=True, eq=False)
class LagrangianTrajectory:
    """Frame process zeta_t centred on the tagged particle.

    Frame arrays are indexed by frame site + half_width.  Shift events carry
    sign +1 (the tagged particle stepped right) or -1.
    """

    half_width: int
    horizon: float
    initial: np.ndarray = field(repr=False)
    final: np.ndarray = field(repr=False)
    shift_times: np.ndarray = field(repr=False)
    shift_signs: np.ndarray = field(repr=False)
    _change_times: np.ndarray = field(repr=False)
    _change_values: np.ndarray = field(repr=False)

    def n_plus(self, t: float) -> int:
        k = np.searchsorted(self.shift_times, t, side="right")
        return int(np.count_nonzero(self.shift_signs[:k] == 1))

    def n_minus(self, t: float) -> int:
        k = np.searchsorted(self.shift_times, t, side="right")
        return int(np.count_nonzero(self.shift_signs[:k] == -1))

    def displacement(self, t: float) -> int:
        """Z(t) = X(t) - X(0)."""
        k = np.searchsorted(self.shift_times, t, side="right")
        return int(self.shift_signs[:k].sum())

    def compensator(self, t: float) -> float:
        """(1/2) * integral of zeta_s(-1) - zeta_s(1) over [0, t]."""
        return 0.5 * _piecewise_integral(self._change_times, self._change_values, t)

    def martingale(self, t: float) -> float:
        return self.displacement(t) - self.compensator(t)


def _piecewise_integral(change_times: np.ndarray, values: np.ndarray, t: float) -> float:
    k = int(np.searchsorted(change_times, t, side="right"))
    if k == 0:
        return 0.0
    edges = np.append(change_times[1:k], t)
    return float(np.sum(values[:k] * (edges - change_times[:k])))


def evolve_lagrangian(
    rho: float,
    horizon: float,
    seed: SeedSpec,
    half_width: int,
    initial: np.ndarray | None = None,
    exchanges: bool = True,
) -> LagrangianTrajectory:
    """Simulate the frame process on sites -half_width..half_width.

    Shift candidates ring at rate 1/2 per direction and are accepted when the
    target site is empty.  Sites entering at the frame edge after a shift are
    drawn fresh from Bernoulli(rho).
    """
    rho = check_density(rho)
    if rho in (0.0, 1.0):
        raise ValueError("frame process needs 0 < rho < 1")
    if half_width < 2:
        raise ValueError("frame half-width must be at least 2")
    key = seed.key(Purpose.LAGRANGIAN, 0)
    n = 2 * half_width + 1
    if initial is None:
        u = _hash.uniform_array(seed.key(Purpose.LAGRANGIAN, 1), np.arange(n, dtype=np.int64))
        zeta0 = (u < rho).astype(np.int8)
        zeta0[half_width] = 1
    else:
        zeta0 = np.asarray(initial, dtype=np.int8).copy()
        if zeta0.shape != (n,) or zeta0[half_width] != 1:
            raise ValueError("initial frame must have length 2W+1 and a particle at the origin")
    ok, st, ss, ct, cv, final = _evolve_frame(key, rho, half_width, float(horizon), zeta0, exchanges)
    if not ok:
        raise FrameInvariantError("frame origin became empty")
    return LagrangianTrajectory(half_width, float(horizon), zeta0, final, st, ss, ct, cv)
