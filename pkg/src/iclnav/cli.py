"""Command-line interface: `run` executes one closed-loop scenario,
`sweep` repeats it across orthogonality penalties.

Exit codes: 0 success, 2 configuration error, 3 simulation abort
(feature lost / degenerate bearing), 4 I/O error.
"""
from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from .config import ParseError, ValidationError, default_config, load_config
from .harness import SimulationAbort, run, sweep_gamma
from .report import emit_artifacts

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ABORT = 3
EXIT_IO = 4

DEFAULT_GAMMAS = "0,5,10,15,25,50"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="iclnav",
        description="Bearing-only distance observer and observability-aware "
                    "velocity planner: closed-loop simulation harness.")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None,
                        help="scenario JSON (default: built-in scenario)")
    common.add_argument("--out", type=Path, default=Path("out"),
                        help="output directory (default: ./out)")
    common.add_argument("--seed", type=int, default=None,
                        help="override the config noise seed")
    common.add_argument("--quiet", action="store_true",
                        help="suppress the summary printout")

    sub.add_parser("run", parents=[common],
                   help="execute one closed-loop run and emit its artifacts")
    sweep = sub.add_parser("sweep", parents=[common],
                           help="run the scenario across orthogonality penalties")
    sweep.add_argument("--gammas", type=str, default=DEFAULT_GAMMAS,
                       help=f"comma-separated penalty values (default: {DEFAULT_GAMMAS})")
    return parser


def _load(args) -> "ScenarioConfig":
    cfg = load_config(args.config) if args.config is not None else default_config()
    if args.seed is not None:
        if args.seed < 0 or args.seed >= 2 ** 64:
            raise ValidationError("noise.seed", "must be an unsigned 64-bit integer")
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def _parse_gammas(text: str) -> list[float]:
    try:
        values = [float(x) for x in text.split(",") if x.strip() != ""]
    except ValueError as e:
        raise ValidationError("--gammas", f"not a number list: {e}") from e
    if not values:
        raise ValidationError("--gammas", "at least one value required")
    if any(g < 0.0 for g in values):
        raise ValidationError("--gammas", "values must be non-negative")
    return values


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load(args)
        gammas = _parse_gammas(args.gammas) if args.command == "sweep" else None
    except (ParseError, ValidationError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"cannot read config: {e}", file=sys.stderr)
        return EXIT_IO

    try:
        if args.command == "run":
            try:
                log = run(cfg)
            except SimulationAbort as e:
                paths = emit_artifacts(e.partial, args.out)
                print(f"simulation aborted: {e.reason}", file=sys.stderr)
                if not args.quiet:
                    _print_paths(paths)
                return EXIT_ABORT
            paths = emit_artifacts(log, args.out)
            if not args.quiet:
                tau = log.tau
                tau_txt = f"{tau:.3f} s" if tau == tau else "not reached"
                final = float((log.p_cg[-1] ** 2).sum()) ** 0.5
                print(f"run complete: {log.rows} rows, excitation by {tau_txt}, "
                      f"final goal error {final:.3e} m")
                _print_paths(paths)
        else:
            result = sweep_gamma(cfg, gammas)
            paths = emit_artifacts(result, args.out)
            if not args.quiet:
                for i, g in enumerate(result.gammas):
                    if result.failures[i] is not None:
                        print(f"gamma={g:g}: FAILED ({result.failures[i]})")
                    else:
                        print(f"gamma={g:g}: avg cond {result.avg_cond[i]:.3f}, "
                              f"final error {result.final_pos_err[i]:.3e} m, "
                              f"total cost {result.total_cost[i]:.3f}")
                _print_paths(paths)
            if all(f is not None for f in result.failures):
                print("sweep failed for every gamma", file=sys.stderr)
                return EXIT_ABORT
    except OSError as e:
        target = getattr(e, "filename", None) or args.out
        print(f"I/O error writing {target}: {e}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def _print_paths(paths) -> None:
    for p in paths:
        print(f"  wrote {p}")


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
