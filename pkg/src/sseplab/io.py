"""CSV persistence of ensemble runs.

A run directory holds ``spec.cfg`` (the resolved spec), ``rows.csv``,
``summary.csv``, ``audit.csv``, ``spacings.csv`` and, when paths are
retained, ``paths.csv``.  Everything needed to rebuild an
:class:`EnsembleSummary` is read back from these files.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from sseplab.config import ExperimentSpec, parse_spec
from sseplab.ensemble import N_SPACINGS, OBSERVABLES, EnsembleSummary, accumulate

ROW_HEADER = ("replicate", "t", "J", "X", "K", "M", "A", "resampled")
SUMMARY_HEADER = ("observable", "t", "n", "mean", "se_mean", "variance", "se_variance", "m4", "m6")
AUDIT_HEADER = ("replicate", "attempts", "events", "checks", "x0", "a_minus", "a_zero", "a_plus")
PATH_HEADER = ("replicate", "t", "J", "X")


def fmt(x: float) -> str:
    """17 significant digits: enough for an exact float round trip."""
    return format(float(x), ".17g")


def write_rows(summary: EnsembleSummary, path: str | Path) -> None:
    """One row per replicate and grid time, ordered by (replicate, t)."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(ROW_HEADER)
        cols = [summary.rows[name] for name in OBSERVABLES]
        for i in range(summary.n):
            flag = int(summary.resampled[i])
            for g, t in enumerate(summary.times):
                wr.writerow([i, fmt(t), *(fmt(c[i, g]) for c in cols), flag])


def read_rows(path: str | Path) -> tuple[np.ndarray, dict[str, np.ndarray], np.ndarray]:
    """Return (grid times, observable -> (N, n_times) array, resampled flags)."""
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = tuple(next(rd, ()))
        if header != ROW_HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        records = [r for r in rd if r]
    if not records:
        return np.zeros(0), {name: np.zeros((0, 0)) for name in OBSERVABLES}, np.zeros(0, dtype=bool)
    data = np.array([[float(v) for v in r[1:7]] for r in records])
    reps = np.array([int(r[0]) for r in records])
    times = np.unique(data[:, 0])
    n = reps.max() + 1
    if reps.size != n * times.size:
        raise ValueError(f"{path}: expected {n} x {times.size} rows, found {reps.size}")
    rows = {name: data[:, 1 + o].reshape(n, times.size) for o, name in enumerate(OBSERVABLES)}
    flags = np.array([r[7] == "1" for r in records]).reshape(n, times.size)[:, 0]
    return times, rows, flags


def write_summary(summary: EnsembleSummary, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(SUMMARY_HEADER)
        for name in OBSERVABLES:
            for t, acc in zip(summary.times, summary.accumulators[name]):
                wr.writerow(
                    [name, fmt(t), acc.n, fmt(acc.mean), fmt(acc.se_mean()), fmt(acc.variance()), fmt(acc.se_variance()),
                     fmt(acc.central_moment(4)), fmt(acc.central_moment(6))]
                )


def write_paths(summary: EnsembleSummary, path: str | Path) -> None:
    j, x = summary.paths["J"], summary.paths["X"]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(PATH_HEADER)
        for i in range(j.shape[0]):
            for t in range(j.shape[1]):
                wr.writerow([i, t, int(j[i, t]), int(x[i, t])])


def read_paths(path: str | Path) -> dict[str, np.ndarray]:
    raw = np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.int64, ndmin=2)
    n = int(raw[:, 0].max()) + 1
    steps = raw.shape[0] // n
    return {"J": raw[:, 2].reshape(n, steps).astype(np.int32), "X": raw[:, 3].reshape(n, steps).astype(np.int32)}


def write_audit(summary: EnsembleSummary, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(AUDIT_HEADER)
        for i in range(summary.n):
            wr.writerow([i, summary.attempts[i], summary.events[i], summary.checks[i], summary.x0[i], *summary.ak_counts[i]])


def write_spacings(summary: EnsembleSummary, path: str | Path) -> None:
    idx = [*range(-N_SPACINGS, 0), *range(1, N_SPACINGS + 1)]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["replicate", *(f"d{i}" for i in idx)])
        for i, row in enumerate(summary.spacings):
            wr.writerow([i, *row])


def _table(path: Path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.int64, ndmin=2)


def write_run(summary: EnsembleSummary, out: str | Path) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    # record the resolved window so a reader never recomputes it
    (out / "spec.cfg").write_text(summary.spec.with_(half_width=summary.half_width).to_text())
    write_rows(summary, out / "rows.csv")
    write_summary(summary, out / "summary.csv")
    write_audit(summary, out / "audit.csv")
    write_spacings(summary, out / "spacings.csv")
    if summary.paths is not None:
        write_paths(summary, out / "paths.csv")
    return out


def read_spec(out: str | Path) -> ExperimentSpec:
    # the recorded seed is authoritative when reading a finished run
    return parse_spec((Path(out) / "spec.cfg").read_text(), env={})


def read_run(out: str | Path) -> EnsembleSummary:
    out = Path(out)
    spec = read_spec(out)
    times, rows, flags = read_rows(out / "rows.csv")
    audit = _table(out / "audit.csv")
    spacings = _table(out / "spacings.csv")
    paths = read_paths(out / "paths.csv") if (out / "paths.csv").exists() else None
    if audit.shape[0] != flags.size:
        raise ValueError(f"{out}: audit.csv and rows.csv disagree on the replicate count")
    return EnsembleSummary(
        spec=spec,
        half_width=int(spec.half_width),
        times=times,
        accumulators=accumulate(rows),
        rows=rows,
        attempts=audit[:, 1],
        x0=audit[:, 4],
        ak_counts=audit[:, 5:8],
        spacings=spacings[:, 1:],
        events=audit[:, 2],
        checks=audit[:, 3],
        paths=paths,
    )
