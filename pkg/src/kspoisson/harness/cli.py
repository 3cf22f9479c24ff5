"""Command line entry point: ``run``, ``plot`` and ``validate``.

Exit codes: 0 success, 1 usage error, 2 runtime or filter error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import FILTER_CHOICES, ConfigError, ExperimentConfig, parse_override
from .experiments import EXPERIMENTS

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for runtime failures here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="kspoisson", description="Ensemble Poisson-filter experiments")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run a Monte Carlo campaign and write its artifact directory")
    run.add_argument("--experiment", choices=sorted(EXPERIMENTS))
    run.add_argument("--seed", type=int)
    run.add_argument("--runs", type=int, dest="n_runs")
    run.add_argument("--ensemble", type=int, nargs="+", dest="ensemble_sizes", metavar="N_E")
    run.add_argument("--filter", choices=FILTER_CHOICES)
    run.add_argument("--out", dest="out_dir")
    run.add_argument("--override", action="append", default=[], metavar="KEY=VALUE", help="JSON-parsed parameter override")
    run.add_argument("--config", type=Path, help="JSON config file; explicit flags take precedence")

    plot = sub.add_parser("plot", help="write plot scripts for an artifact directory")
    plot.add_argument("--artifact", type=Path, required=True)
    plot.add_argument("--components", nargs="*", help="plot kinds to emit (default: all that apply)")

    sub.add_parser("validate", help="run the built-in invariant and oracle checks")
    return parser


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    data: dict = {}
    if args.config is not None:
        try:
            data = ExperimentConfig.load(args.config).__dict__.copy()
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}") from None
    for key in ("experiment", "seed", "n_runs", "ensemble_sizes", "filter", "out_dir"):
        value = getattr(args, key)
        if value is not None:
            data[key] = value
    overrides = dict(data.get("overrides", {}))
    for item in args.override:
        key, value = parse_override(item)
        overrides[key] = value
    data["overrides"] = overrides
    if "experiment" not in data:
        raise UsageError("--experiment is required (or give it in --config)")
    return ExperimentConfig.from_dict(data)


def _cmd_run(args) -> int:
    from .runner import run_experiment

    try:
        config = config_from_args(args)
    except (UsageError, ConfigError) as exc:
        print(f"kspoisson run: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        artifact = run_experiment(config)
    except Exception as exc:  # any crash in the pipeline is a runtime failure
        print(f"kspoisson run: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"artifact written to {artifact.directory}")
    for label, entry in artifact.summary["filters"].items():
        print(f"  {label}: {entry['n_ok']}/{config.n_runs} runs ok")
    if artifact.failures:
        print(f"{len(artifact.failures)} filter run(s) failed; see summary.json", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def _cmd_plot(args) -> int:
    from .plots import emit_plots

    if not (args.artifact / "config.json").is_file():
        print(f"kspoisson plot: error: {args.artifact} is not an artifact directory", file=sys.stderr)
        return EXIT_USAGE
    try:
        paths = emit_plots(args.artifact, args.components)
    except ValueError as exc:
        print(f"kspoisson plot: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"kspoisson plot: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for p in paths:
        print(p)
    return EXIT_OK


def _cmd_validate(args) -> int:
    from .validate import run_checks

    results = run_checks()
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_RUNTIME


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    handlers = {"run": _cmd_run, "plot": _cmd_plot, "validate": _cmd_validate}
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
