"""Lattice windows, occupancy configurations and reproducible random streams."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from sseplab import _hash


class BoundaryError(ValueError):
    """A bond or site lies outside the lattice window."""


class Purpose(enum.IntEnum):
    """Tags separating the independent stream families derived from one seed."""

    REPLICATE = 1
    CLOCK = 2
    CONFIG = 3
    LAGRANGIAN = 4
    JITTER = 5
    BOOTSTRAP = 6
    GEOMETRIC = 7
    TEST = 8


@dataclass(frozen=True)
class LatticeWindow:
    """Contiguous block of sites ``lo..hi`` with closed boundary.

    The symmetric window of half-width W (sites -W..W) is the standard case;
    other blocks are only used by the small exact-oracle comparisons.
    """

    lo: int
    hi: int

    def __post_init__(self) -> None:
        if self.hi < self.lo:
            raise ValueError(f"empty window [{self.lo}, {self.hi}]")

    @classmethod
    def symmetric(cls, half_width: int) -> LatticeWindow:
        if half_width < 1:
            raise ValueError("half_width must be a positive integer")
        return cls(-int(half_width), int(half_width))

    @classmethod
    def segment(cls, n_sites: int) -> LatticeWindow:
        """n sites placed so that the bond (0, 1) sits in the middle."""
        if n_sites < 2:
            raise ValueError("a segment needs at least two sites")
        lo = -((n_sites - 1) // 2)
        return cls(lo, lo + n_sites - 1)

    @property
    def half_width(self) -> int:
        if self.lo != -self.hi:
            raise ValueError("window is not symmetric about the origin")
        return self.hi

    @property
    def n_sites(self) -> int:
        return self.hi - self.lo + 1

    @property
    def n_bonds(self) -> int:
        return self.hi - self.lo

    @property
    def sites(self) -> np.ndarray:
        return np.arange(self.lo, self.hi + 1, dtype=np.int64)

    @property
    def bonds(self) -> list[tuple[int, int]]:
        return [(x, x + 1) for x in range(self.lo, self.hi)]

    def index(self, site: int) -> int:
        if not self.lo <= site <= self.hi:
            raise BoundaryError(f"site {site} outside window [{self.lo}, {self.hi}]")
        return site - self.lo

    def contains(self, site: int) -> bool:
        return self.lo <= site <= self.hi


@dataclass(frozen=True, eq=False)
class Configuration:
    """Occupancy of every site in a window, stored densely (index = site - lo)."""

    window: LatticeWindow
    occupancy: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        occ = np.ascontiguousarray(self.occupancy, dtype=np.int8)
        if occ.shape != (self.window.n_sites,):
            raise ValueError(
                f"occupancy has shape {occ.shape}, window needs ({self.window.n_sites},)"
            )
        if occ.size and (occ.min() < 0 or occ.max() > 1):
            raise ValueError("occupancy values must be 0 or 1")
        occ.flags.writeable = False
        object.__setattr__(self, "occupancy", occ)

    def __getitem__(self, site: int) -> int:
        return int(self.occupancy[self.window.index(site)])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Configuration):
            return NotImplemented
        return self.window == other.window and np.array_equal(
            self.occupancy, other.occupancy
        )

    def __hash__(self) -> int:
        return hash((self.window, self.occupancy.tobytes()))

    @property
    def particle_count(self) -> int:
        return int(self.occupancy.sum())

    def occupied_sites(self) -> np.ndarray:
        return np.flatnonzero(self.occupancy) + self.window.lo


def check_density(rho: float) -> float:
    rho = float(rho)
    if not 0.0 <= rho <= 1.0 or math.isnan(rho):
        raise ValueError(f"density must lie in [0, 1], got {rho}")
    return rho


@dataclass(frozen=True)
class Stream:
    """A stateless random stream: draw ``i`` depends only on (key, i)."""

    key: np.uint64

    def uniform(self, counter: int) -> float:
        return float(_hash.uniform_array(self.key, np.array([counter], dtype=np.int64))[0])

    def uniforms(self, counters) -> np.ndarray:
        return _hash.uniform_array(self.key, np.asarray(counters, dtype=np.int64))

    def numpy_generator(self) -> np.random.Generator:
        """A numpy Generator seeded from this stream, for bulk bookkeeping draws."""
        return np.random.default_rng(int(self.key))


@dataclass(frozen=True)
class SeedSpec:
    """Master seed plus the rule deriving independent streams from it.

    ``derive(tag, i)`` mixes (master seed, tag, i) through a splitmix64 chain,
    so the stream for bond ``x`` of replicate ``r`` is the same whatever the
    window size.
    """

    master_seed: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "master_seed", int(self.master_seed) & (2**64 - 1))

    @property
    def root(self) -> np.uint64:
        return np.uint64(self.master_seed)

    def key(self, tag: Purpose | int, index: int) -> np.uint64:
        k = _hash.combine_scalar(self.root, np.int64(int(tag)))
        return _hash.combine_scalar(k, np.int64(index))

    def stream(self, tag: Purpose | int, index: int) -> Stream:
        return Stream(self.key(tag, index))

    def child(self, tag: Purpose | int, index: int) -> SeedSpec:
        """A nested SeedSpec, e.g. the per-replicate seed."""
        return SeedSpec(int(self.key(tag, index)))

    def replicate(self, index: int, attempt: int = 0) -> SeedSpec:
        seed = self.child(Purpose.REPLICATE, index)
        if attempt:
            seed = seed.child(Purpose.REPLICATE, attempt)
        return seed


def sample_config(window: LatticeWindow, rho: float, stream: Stream) -> Configuration:
    """Bernoulli(rho) product configuration; site x uses draw number x."""
    rho = check_density(rho)
    u = stream.uniforms(window.sites)
    return Configuration(window, (u < rho).astype(np.int8))


def exchange(config: Configuration, x: int) -> Configuration:
    """Swap the occupancies of sites x and x+1."""
    w = config.window
    if not (w.contains(x) and w.contains(x + 1)):
        raise BoundaryError(f"bond ({x}, {x + 1}) is not inside window [{w.lo}, {w.hi}]")
    i = x - w.lo
    occ = config.occupancy.copy()
    occ[i], occ[i + 1] = occ[i + 1], occ[i]
    return Configuration(w, occ)


def sample_geometric(rho: float, stream: Stream, counter: int = 0) -> int:
    """Geometric(rho) on {1, 2, ...}: P(k) = rho (1 - rho)^(k - 1)."""
    return int(sample_geometric_array(rho, stream, 1, start=counter)[0])


def sample_geometric_array(rho: float, stream: Stream, n: int, start: int = 0) -> np.ndarray:
    rho = check_density(rho)
    if rho == 0.0:
        raise ValueError("Geometric(0) is undefined")
    if rho == 1.0:
        return np.ones(n, dtype=np.int64)
    u = stream.uniforms(np.arange(start, start + n))
    # inversion: smallest k with 1 - (1-rho)^k > u
    k = np.floor(np.log1p(-u) / math.log1p(-rho)) + 1
    return k.astype(np.int64)
