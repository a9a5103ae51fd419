"""Command-line entry point.

Exit codes: 0 on success, 2 when the scenario is invalid, 3 when a solver
precondition fails.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .config import PRESETS, ConfigError, from_dict, load_config, preset
from .game import GameError
from .hjb import SolverPreconditionError
from .model import ModelError
from .reporting import FIGURES, TABLES, run_benchmark, run_figure, run_game, run_simulate, run_solve, run_table
from .simulation import SimulationError
from .tax import TaxError

OUT_ENV = "CARBON_ABATEMENT_OUT"
EXIT_OK, EXIT_INVALID, EXIT_PRECONDITION = 0, 2, 3


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    src = common.add_mutually_exclusive_group()
    src.add_argument("--config", type=Path, help="scenario JSON file")
    src.add_argument("--preset", choices=sorted(PRESETS), help="built-in scenario")
    common.add_argument("--out", type=Path, help=f"output directory (default ${OUT_ENV} or the scenario's outputs.directory)")
    common.add_argument("--seed", type=int, help="override sim.seed")
    common.add_argument("--paths", type=int, help="override sim.n_paths")

    p = argparse.ArgumentParser(prog="carbon-abatement", description="Abatement investment under carbon-tax risk and uncertainty.")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("solve", parents=[common], help="solve the HJB (or game) equation and write grids")
    s.add_argument("--no-convergence", action="store_true", help="skip the half-resolution re-solve")
    sub.add_parser("simulate", parents=[common], help="Monte Carlo under the solved policy")
    sub.add_parser("game", parents=[common], help="tax-uncertainty game: saddle fields, grids, statistics")
    t = sub.add_parser("table", parents=[common], help="quantile table across variants")
    t.add_argument("--table", dest="table_id", choices=TABLES, default="emissions")
    f = sub.add_parser("figure", parents=[common], help="SVG figure with CSV sidecar")
    f.add_argument("--figure", dest="figure_id", choices=sorted(FIGURES), required=True)
    sub.add_parser("benchmark", parents=[common], help="deterministic benchmark constants")
    sub.add_parser("presets", help="list built-in presets")
    return p


def _load(args):
    if args.config is not None:
        cfg = load_config(args.config)
    elif args.preset is not None:
        cfg = preset(args.preset)
    else:
        raise ConfigError("<root>: give --config PATH or --preset NAME")
    if args.seed is not None or args.paths is not None:
        doc = cfg.to_dict()
        if args.seed is not None:
            doc["sim"]["seed"] = args.seed
        if args.paths is not None:
            doc["sim"]["n_paths"] = args.paths
        cfg = from_dict(doc)
    return cfg


def _out_dir(args, cfg) -> Path:
    if args.out is not None:
        return args.out
    env = os.environ.get(OUT_ENV)
    return Path(env) if env else Path(cfg.outputs.directory)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "presets":
        for name in sorted(PRESETS):
            print(name)
        return EXIT_OK
    try:
        cfg = _load(args)
        out = _out_dir(args, cfg)
        if args.command == "solve":
            manifest = run_solve(cfg, out, convergence=not args.no_convergence)
        elif args.command == "simulate":
            manifest = run_simulate(cfg, out)
        elif args.command == "game":
            manifest = run_game(cfg, out)
        elif args.command == "table":
            manifest = run_table(cfg, args.table_id, out)
        elif args.command == "figure":
            manifest = run_figure(cfg, args.figure_id, out)
        else:
            manifest = run_benchmark(cfg, out)
    except SolverPreconditionError as exc:
        print(f"solver precondition failed: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except (ConfigError, ModelError, TaxError, GameError, SimulationError) as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return EXIT_INVALID
    print(json.dumps({"out": str(out), "command": manifest["command"], "wall_time_s": round(manifest["wall_time_s"], 3)}))
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
