"""Command line entry point: ``sseplab {simulate,oracle,verify,report}``.

Exit codes: 0 success, 1 acceptance failure, 2 usage or configuration
error, 3 violated pathwise identity or I/O failure.

Seed precedence: ``SSEPLAB_SEED`` in the environment overrides the
``seed`` line of the spec file.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys
from pathlib import Path

from sseplab import io, oracle
from sseplab.config import SpecError, desk_spec_path, load_spec
from sseplab.observables import IdentityViolation

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse exits with 2 already; keep it catchable
        raise UsageError(message)


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sseplab", description="Symmetric exclusion ensembles, exact oracles and acceptance checks.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sim = sub.add_parser("simulate", help="run an ensemble and write rows.csv and summary.csv")
    sim.add_argument("--spec", required=True)
    sim.add_argument("--out")
    sim.add_argument("--workers", type=int)

    orc = sub.add_parser("oracle", help="exact small-system checks")
    orc.add_argument("--check", required=True, choices=("negcorr", "current", "walker"))
    orc.add_argument("--sites", type=int, default=4)
    orc.add_argument("--time", type=float, default=1.0)
    orc.add_argument("--rho", type=float, default=0.5)
    orc.add_argument("--out")

    ver = sub.add_parser("verify", help="run the acceptance suite")
    ver.add_argument("--suite", default="acceptance", choices=("acceptance",))
    ver.add_argument("--spec", default=None, help="defaults to the shipped desk spec")
    ver.add_argument("--out")
    ver.add_argument("--workers", type=int)

    rep = sub.add_parser("report", help="compare a finished run with the limiting constants")
    rep.add_argument("--spec", required=True)
    rep.add_argument("--out")
    return p


def _out_dir(args, spec) -> Path:
    return Path(args.out if args.out else spec.output)


def _workers(args) -> int:
    return args.workers if args.workers else (os.cpu_count() or 1)


def _simulate(args) -> int:
    from sseplab.ensemble import run_ensemble

    spec = load_spec(args.spec)
    out = _out_dir(args, spec)
    summary = run_ensemble(spec, workers=_workers(args))
    io.write_run(summary, out)
    print(f"{summary.n} replicates, window half-width {summary.half_width}, {int(summary.checks.sum())} identity checks")
    for name in ("J", "X", "K"):
        last = summary.accumulators[name][-1]
        print(f"  {name}(t={summary.times[-1]:g}): mean {last.mean:+.4f}  var {last.variance():.4f}")
    print(f"wrote {out / 'rows.csv'}")
    return EXIT_OK


def _oracle(args) -> int:
    out = Path(args.out) if args.out else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    if args.check == "negcorr":
        rep = oracle.check_negative_correlation(args.sites, args.time)
        print(f"negative correlation on {args.sites} sites at t={args.time:g}: max violation {rep.max_violation:.3e} "
              f"(tolerance {rep.tol:g}) -> {'holds' if rep.holds else 'VIOLATED'}")
        if out is not None:
            rep.write_csv(out / "negcorr.csv")
        return EXIT_OK if rep.holds else EXIT_FAIL
    if args.check == "current":
        pmf = oracle.exact_current_distribution(args.sites, args.rho, args.time)
        print(f"current pmf, {args.sites} sites, rho={args.rho:g}, t={args.time:g}")
        for j, p in pmf.items():
            print(f"  J={j:+d}  {p:.15g}")
        if out is not None:
            with open(out / "current.csv", "w", newline="") as fh:
                wr = csv.writer(fh, lineterminator="\n")
                wr.writerow(["J", "probability"])
                wr.writerows((j, io.fmt(p)) for j, p in pmf.items())
        return EXIT_OK
    value = oracle.mean_positive_walk(args.time)
    print(f"E[max(z(0,t),0)] at t={args.time:g}: {value:.12f}  (scaled by sqrt(t): {value / math.sqrt(args.time or 1):.6f})")
    if out is not None:
        with open(out / "walker.csv", "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["t", "mean_positive"])
            wr.writerow([io.fmt(args.time), io.fmt(value)])
    return EXIT_OK


def verify(spec_path: str | Path | None, out: str | Path | None = None, workers: int | None = None, log=print):
    """Run the acceptance suite; returns (exit code, outcomes)."""
    from sseplab.acceptance import AcceptanceContext, run_acceptance

    spec = load_spec(spec_path if spec_path is not None else desk_spec_path())
    out = Path(out) if out is not None else Path(spec.output)
    ctx = AcceptanceContext(spec, out, workers=workers or 1, log=log)
    outcomes = run_acceptance(ctx)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "acceptance.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["criterion", "name", "passed", "detail"])
        wr.writerows((o.number, o.name, int(o.passed), o.detail) for o in outcomes)
    passed = sum(o.passed for o in outcomes)
    log(f"{passed}/{len(outcomes)} criteria passed")
    return (EXIT_OK if passed == len(outcomes) else EXIT_FAIL), outcomes


def _verify(args) -> int:
    code, _ = verify(args.spec, args.out, _workers(args))
    return code


def report_tables(summary) -> dict[str, list[tuple[float, float, float, float]]]:
    """Plot-ready (t, value, se, theory) rows for Var J/sqrt t, Var X/sqrt t and E K/sqrt t."""
    from sseplab.stats import TheoryConstants

    th = TheoryConstants(summary.spec.rho)
    tables = {}
    for key, name, theory in (("var_J", "J", th.sigma2_j), ("var_X", "X", th.sigma2_x), ("mean_K", "K", th.k_limit)):
        rows = []
        for t, acc in zip(summary.times, summary.accumulators[name]):
            s = math.sqrt(t)
            if key.startswith("var"):
                rows.append((float(t), acc.variance() / s, acc.se_variance() / s, theory))
            else:
                rows.append((float(t), acc.mean / s, acc.se_mean() / s, theory))
        tables[key] = rows
    return tables


def _report(args) -> int:
    spec = load_spec(args.spec)
    out = _out_dir(args, spec)
    if not (out / "rows.csv").exists():
        raise SpecError(f"no rows.csv in {out}; run 'simulate' first")
    summary = io.read_run(out)
    for key, rows in report_tables(summary).items():
        path = out / f"report_{key}.csv"
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["t", "value", "se", "theory"])
            wr.writerows([io.fmt(v) for v in r] for r in rows)
        print(f"{key} (scaled by sqrt t)")
        for t, v, se, theory in rows:
            print(f"  t={t:8g}  {v:.4f} +- {se:.4f}  theory {theory:.6f}  ratio {v / theory:.3f}")
        print(f"  -> {path}")
    return EXIT_OK


_COMMANDS = {"simulate": _simulate, "oracle": _oracle, "verify": _verify, "report": _report}


def run_cli(argv: list[str] | None = None) -> int:
    try:
        args = _parser().parse_args(argv)
        return _COMMANDS[args.command](args)
    except (UsageError, SpecError, FileNotFoundError) as exc:
        print(f"sseplab: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (IdentityViolation, OSError) as exc:
        print(f"sseplab: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


def main() -> None:
    sys.exit(run_cli())
