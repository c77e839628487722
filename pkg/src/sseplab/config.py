"""Experiment specifications: flat ``key = value`` files with ``#`` comments."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, replace
from pathlib import Path

SEED_ENV = "SSEPLAB_SEED"
MODES = ("simulate", "oracle", "verify", "report")
REQUIRED = ("rho", "lambda", "seed")


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentSpec:
    rho: float
    lam: float
    seed: int
    t_grid: tuple[float, ...] = (1 / 16, 1 / 8, 1 / 4, 1 / 2, 1.0)
    replicates: int = 1000
    window_delta: float = 1e-9
    retain_paths: bool = False
    mode: str = "simulate"
    output: str = "out"
    half_width: int | None = None  # overrides the light-cone rule when set

    def __post_init__(self) -> None:
        if not 0.0 <= self.rho <= 1.0:
            raise SpecError(f"rho must lie in [0, 1], got {self.rho}")
        if not self.lam > 0:
            raise SpecError(f"lambda must be positive, got {self.lam}")
        if not self.t_grid:
            raise SpecError("t_grid must not be empty")
        if list(self.t_grid) != sorted(self.t_grid) or len(set(self.t_grid)) != len(self.t_grid):
            raise SpecError("t_grid must be strictly increasing")
        if not all(0.0 < t <= 1.0 for t in self.t_grid):
            raise SpecError("t_grid values must lie in (0, 1]")
        if self.replicates < 1:
            raise SpecError("replicates must be at least 1")
        if not 0.0 < self.window_delta < 1.0:
            raise SpecError("window_delta must lie in (0, 1)")
        if self.mode not in MODES:
            raise SpecError(f"mode must be one of {', '.join(MODES)}")
        if self.half_width is not None and self.half_width < 1:
            raise SpecError("half_width must be a positive integer")

    @property
    def horizon(self) -> float:
        return self.lam * max(self.t_grid)

    @property
    def grid_times(self) -> tuple[float, ...]:
        """Absolute query times lambda * t."""
        return tuple(float(self.lam * t) for t in self.t_grid)

    def with_(self, **changes) -> ExperimentSpec:
        return replace(self, **changes)

    def to_text(self) -> str:
        lines = [
            f"mode = {self.mode}",
            f"rho = {self.rho!r}",
            f"lambda = {self.lam!r}",
            f"seed = {self.seed}",
            "t_grid = " + ", ".join(repr(t) for t in self.t_grid),
            f"replicates = {self.replicates}",
            f"window_delta = {self.window_delta!r}",
            f"retain_paths = {str(self.retain_paths).lower()}",
            f"output = {self.output}",
        ]
        if self.half_width is not None:
            lines.append(f"half_width = {self.half_width}")
        return "\n".join(lines) + "\n"


def _parse_bool(text: str) -> bool:
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_fraction(text: str) -> float:
    text = text.strip()
    if "/" in text:
        num, den = text.split("/", 1)
        return float(num) / float(den)
    return float(text)


def _parse_grid(text: str) -> tuple[float, ...]:
    return tuple(_parse_fraction(p) for p in text.split(",") if p.strip())


_FIELDS = {
    "mode": ("mode", str.strip),
    "rho": ("rho", float),
    "lambda": ("lam", float),
    "seed": ("seed", int),
    "t_grid": ("t_grid", _parse_grid),
    "replicates": ("replicates", int),
    "n": ("replicates", int),
    "window_delta": ("window_delta", float),
    "delta": ("window_delta", float),
    "retain_paths": ("retain_paths", _parse_bool),
    "output": ("output", str.strip),
    "half_width": ("half_width", int),
}

# per-key range checks, so errors can name the line
_RANGES = {
    "rho": lambda v: 0.0 <= v <= 1.0,
    "lam": lambda v: v > 0 and math.isfinite(v),
    "replicates": lambda v: v >= 1,
    "window_delta": lambda v: 0.0 < v < 1.0,
    "t_grid": lambda v: len(v) > 0 and all(0.0 < t <= 1.0 for t in v) and list(v) == sorted(set(v)),
    "mode": lambda v: v in MODES,
    "half_width": lambda v: v >= 1,
}


def parse_spec(text: str, env: dict[str, str] | None = None) -> ExperimentSpec:
    """Parse a spec file; ``SSEPLAB_SEED`` in ``env`` overrides the file's seed."""
    values: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SpecError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        key = key.lower()
        if key not in _FIELDS:
            raise SpecError(f"line {lineno}: unknown key {key!r}")
        name, conv = _FIELDS[key]
        try:
            parsed = conv(value)
        except ValueError as exc:
            raise SpecError(f"line {lineno}: bad value for {key!r}: {exc}") from None
        check = _RANGES.get(name)
        if check is not None and not check(parsed):
            raise SpecError(f"line {lineno}: value {value!r} out of range for {key!r}")
        values[name] = parsed
    env = os.environ if env is None else env
    override = env.get(SEED_ENV)
    if override not in (None, ""):
        try:
            values["seed"] = int(override)
        except ValueError:
            raise SpecError(f"{SEED_ENV}={override!r} is not an integer") from None
    missing = [k for k in REQUIRED if _FIELDS[k][0] not in values]
    if missing:
        raise SpecError("missing required key(s): " + ", ".join(missing))
    return ExperimentSpec(**values)


def load_spec(path: str | Path, env: dict[str, str] | None = None) -> ExperimentSpec:
    return parse_spec(Path(path).read_text(), env)


def desk_spec_path() -> Path:
    return Path(__file__).with_name("desk.cfg")
