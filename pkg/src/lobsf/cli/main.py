"""``lobsf run | validate | list-experiments``."""

from __future__ import annotations

import argparse
import platform
import sys
import warnings
from pathlib import Path

import numpy as np
import scipy

from .. import __version__
from ..errors import BracketError, ConsistencyError, IllPosedError, LobsfError, NumericDomainError
from .config import EXPERIMENTS, load_scenario
from .experiments import DESCRIPTIONS, RUNNERS
from .output import print_table, write_json

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERIC = 3


def _exit_code(exc: Exception) -> int:
    if isinstance(exc, (NumericDomainError, IllPosedError, BracketError, ConsistencyError, ArithmeticError)):
        return EXIT_NUMERIC
    return EXIT_VALIDATION


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lobsf", description="Limit order book self-financing toolkit.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("run", "validate"):
        p = sub.add_parser(name, help=f"{name} a scenario file")
        p.add_argument("config", type=Path)
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config entry, e.g. hedge.n_t=800 (repeatable)")
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int)
        if name == "run":
            p.add_argument("--out", type=str, help="output directory (default results/<name>)")
            p.add_argument("--quiet", action="store_true")
    sub.add_parser("list-experiments", help="list available experiments")
    return ap


def _versions() -> dict:
    return {"lobsf": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def run(config: Path, overrides=(), seed=None, out=None, threads=None, quiet=False) -> int:
    sc, violations = load_scenario(config, overrides, seed=seed, out=out, threads=threads)
    if violations:
        for v in violations:
            print(f"error: {v}", file=sys.stderr)
        return EXIT_VALIDATION
    outdir = Path(sc.out) if sc.out else Path("results") / sc.name
    outdir.mkdir(parents=True, exist_ok=True)
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            summary, artifacts = RUNNERS[sc.experiment](sc, outdir)
    except (LobsfError, ValueError, ArithmeticError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return _exit_code(exc)
    config_dump = sc.model_dump(exclude={"out", "threads"}, exclude_none=True)
    result = {
        "name": sc.name,
        "experiment": sc.experiment,
        "seed": sc.seed,
        "config": config_dump,
        "summary": summary,
        "artifacts": sorted(artifacts),
        "warnings": sorted({str(w.message) for w in caught}),
        "versions": _versions(),
    }
    write_json(outdir / "result.json", result)
    if not quiet:
        print_table(f"{sc.experiment}: {sc.name} (seed {sc.seed}) -> {outdir}", summary)
    return EXIT_OK


def validate(config: Path, overrides=(), seed=None, threads=None) -> int:
    _, violations = load_scenario(config, overrides, seed=seed, threads=threads)
    if not violations:
        print(f"{config}: ok")
        return EXIT_OK
    for v in violations:
        print(f"{config}: {v}")
    return EXIT_VALIDATION


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "list-experiments":
        for name in EXPERIMENTS:
            print(f"{name:<14} {DESCRIPTIONS[name]}")
        return EXIT_OK
    if args.command == "validate":
        return validate(args.config, args.overrides, args.seed, args.threads)
    return run(args.config, args.overrides, args.seed, args.out, args.threads, args.quiet)


if __name__ == "__main__":
    raise SystemExit(main())
