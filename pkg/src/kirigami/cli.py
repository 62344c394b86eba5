"""Command-line interface: ``kirigami run|study|sweep [--config FILE] [--key value ...]``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import experiments
from .config import KEYS, ConfigError, build_config, load_config_file, parse_value

log = logging.getLogger("kirigami")

HELP = {
    "case": "auxetic, non_auxetic, mixed or custom",
    "n": "sets both nx and ny",
    "dirichlet_constant": "constant slit opening on the Dirichlet sides",
    "dirichlet_ramp": "'left,right' values, linear in x",
    "dirichlet_bump": "peak of peak*sin(pi y / L) on both sides",
    "neumann": "constant flux on the Neumann sides",
    "solver": "newton or picard",
    "epsilons": "comma-separated list (sweep)",
    "manufactured": "study the built-in manufactured problem",
    "compare_picard": "also solve with the other method at every study level",
}


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kirigami", description="Rhombi-slit kirigami slit-opening solver")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (("run", "solve one configuration"),
                       ("study", "mesh-refinement convergence study"),
                       ("sweep", "sweep over the regularization parameter")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", metavar="FILE", help="key = value configuration file")
        for key in KEYS:
            p.add_argument("--" + key.replace("_", "-"), dest=key, metavar="VALUE", help=HELP.get(key))
    return parser


def config_from_args(args) -> "experiments.RunConfig":
    layers = []
    if args.config:
        layers.append(load_config_file(args.config))
    cli = {}
    for key in KEYS:
        raw = getattr(args, key, None)
        if raw is not None:
            cli[key] = parse_value(key, raw, source="command line")
    layers.append(cli)
    return build_config(*layers)


def _write_table(prefix: str, suffix: str, text: str):
    path = Path(f"{prefix}.{suffix}.csv")
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    sys.stdout.write(text)


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s: %(message)s")
    try:
        cfg = config_from_args(args)
    except ConfigError as exc:
        log.error("%s", exc)
        return experiments.EXIT_INVALID

    if args.command == "run":
        return experiments.run(cfg)

    if args.command == "study":
        try:
            rows = experiments.convergence_study(cfg)
        except (ValueError, RuntimeError) as exc:
            log.error("study failed: %s", exc)
            return experiments.EXIT_NOT_CONVERGED
        cols = [c for c in experiments.STUDY_COLUMNS if any(c in r for r in rows)]
        _write_table(cfg.output_prefix, "study", experiments.table_text(rows, cols))
        return experiments.EXIT_OK

    try:
        rows = experiments.epsilon_sweep(cfg, cfg.epsilons)
    except ValueError as exc:
        log.error("invalid input: %s", exc)
        return experiments.EXIT_INVALID
    _write_table(cfg.output_prefix, "sweep", experiments.table_text(rows, experiments.SWEEP_COLUMNS))
    return experiments.EXIT_OK if all(r["converged"] for r in rows) else experiments.EXIT_NOT_CONVERGED


if __name__ == "__main__":
    sys.exit(main())
