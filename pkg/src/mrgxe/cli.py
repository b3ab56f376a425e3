"""Command-line interface: ``mrgxe {simulate,estimate,experiment,theory,scan}``.

Exit status: 0 success, 1 usage or configuration error, 2 data or fitting
error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from .errors import ConfigError, MRGxEError
from .estimators import run_all_methods
from .harness import EXPERIMENT_SCHEMA, ExperimentSpec, run_experiment
from .model import ALL_METHODS, ESTIMATE_CSV_HEADER, PARAM_SCHEMA, Method, OutcomeFamily, load_params
from .scan import run_scan
from .simgen import RngStream, generate, read_dataset_csv, write_dataset_csv
from .theory import format_oracles, oracle_values

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


def _schema_text() -> str:
    width = max(len(k) for k in (*PARAM_SCHEMA, *EXPERIMENT_SCHEMA))
    lines = ["parameter config keys (flat TOML; used by simulate, theory and [overrides]):"]
    lines += [f"  {k:<{width}}  {v}" for k, v in PARAM_SCHEMA.items()]
    lines += ["", "experiment config keys (TOML):"]
    lines += [f"  {k:<{width}}  {v}" for k, v in EXPERIMENT_SCHEMA.items()]
    return "\n".join(lines)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad usage; route through main() so it becomes 1
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _methods(text: str) -> List[Method]:
    try:
        return [Method.parse(m) for m in text.split(",") if m.strip()]
    except ConfigError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.RawDescriptionHelpFormatter
    parser = _Parser(
        prog="mrgxe",
        description="Mendelian-randomization estimators for gene-environment interaction.",
        epilog=_schema_text(),
        formatter_class=fmt,
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("simulate", help="draw one dataset", epilog=_schema_text(), formatter_class=fmt)
    p.add_argument("--config", required=True, type=Path, help="parameter config (TOML)")
    p.add_argument("--seed", required=True, type=int, help="master seed")
    p.add_argument("--replicate", type=int, default=0, help="replicate index (default 0)")
    p.add_argument("--out", required=True, type=Path, help="output CSV")
    p.add_argument("--include-u", action="store_true", help="also write the hidden confounder")

    p = sub.add_parser("estimate", help="run estimators on a dataset CSV")
    p.add_argument("--data", required=True, type=Path, help="CSV with header y,x,g,z,g_iv[,u]")
    p.add_argument("--family", required=True, choices=[f.value for f in OutcomeFamily])
    p.add_argument("--methods", type=_methods, default=list(ALL_METHODS),
                   help="comma-separated methods (default: all six)")
    p.add_argument("--first-stage", choices=("sample", "controls"), default="sample",
                   help="rows used to fit the exposure model (default: all rows)")

    p = sub.add_parser("experiment", help="run a Monte Carlo grid", epilog=_schema_text(), formatter_class=fmt)
    p.add_argument("--config", required=True, type=Path, help="experiment config (TOML)")
    p.add_argument("--seed", required=True, type=int, help="master seed")
    p.add_argument("--out", required=True, type=Path, help="output directory")
    p.add_argument("--reps", type=int, help="override n_reps")
    p.add_argument("--threads", type=int, default=1, help="worker processes (default 1)")

    p = sub.add_parser("theory", help="print analytical oracle values", epilog=_schema_text(), formatter_class=fmt)
    p.add_argument("--config", required=True, type=Path, help="parameter config (TOML)")

    p = sub.add_parser("scan", help="per-variant interaction scan")
    p.add_argument("--pheno", required=True, type=Path, help="CSV sample_id,y,x,z,g_iv")
    p.add_argument("--geno", required=True, type=Path, help="CSV sample_id,<variant>...")
    p.add_argument("--method", required=True, type=lambda s: _methods(s)[0])
    p.add_argument("--family", required=True, choices=[f.value for f in OutcomeFamily])
    p.add_argument("--out", required=True, type=Path, help="per-variant output CSV")
    p.add_argument("--qq", type=Path, help="QQ output (default: <out>.qq.csv)")
    return parser


def _cmd_simulate(args) -> int:
    params = load_params(args.config)
    d, prevalence = generate(RngStream(args.seed, args.replicate), params, keep_u=args.include_u)
    write_dataset_csv(d, args.out, include_u=args.include_u)
    print(f"rows={d.n}")
    if params.is_logistic:
        print(f"prevalence={prevalence:.6f}")
    return EXIT_OK


def _cmd_estimate(args) -> int:
    d = read_dataset_csv(args.data, args.family)
    rows = run_all_methods(d, args.methods, first_stage_source=args.first_stage)
    print(ESTIMATE_CSV_HEADER)
    for r in rows:
        print(r.csv_line())
        if not r.ok:
            print(f"{r.method.value}: {r.error}: {r.message}", file=sys.stderr)
    return EXIT_OK if all(r.ok for r in rows) else EXIT_DATA


def _cmd_experiment(args) -> int:
    spec = ExperimentSpec.load(args.config, args.seed)
    if args.reps is not None:
        spec = spec.replace(n_reps=args.reps)
    if args.threads < 1:
        raise ConfigError("--threads must be >= 1")
    table = run_experiment(spec, threads=args.threads)
    for path in table.write(args.out):
        print(f"wrote {path}")
    return EXIT_OK if all(c.error is None for c in table.cells) else EXIT_DATA


def _cmd_theory(args) -> int:
    sys.stdout.write(format_oracles(oracle_values(load_params(args.config))))
    return EXIT_OK


def _cmd_scan(args) -> int:
    rows = run_scan(args.pheno, args.geno, args.method, args.family, args.out, args.qq)
    print(f"variants={len(rows)}")
    return EXIT_OK


_COMMANDS = {
    "simulate": _cmd_simulate,
    "estimate": _cmd_estimate,
    "experiment": _cmd_experiment,
    "theory": _cmd_theory,
    "scan": _cmd_scan,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(str(exc), file=sys.stderr)
        print("\n" + _schema_text(), file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}\n\n{_schema_text()}", file=sys.stderr)
        return EXIT_USAGE
    except (MRGxEError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
