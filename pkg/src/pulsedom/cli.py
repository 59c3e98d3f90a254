"""Command-line entry point: ``pulsedom <subcommand> [options]``."""

from __future__ import annotations

import argparse
import sys

from . import experiments as ex
from .validation import run_all

DEFAULT_PRESET = {
    "figure2": "fig2-caption",
    "figure3": "fig3",
    "force": "fig3",
    "sweep": "fig2-caption",
    "oracle": "fig2-caption",
    "validate": "fig2-caption",
}


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    src = common.add_mutually_exclusive_group()
    src.add_argument("--config", help="JSON scenario file")
    src.add_argument("--preset", choices=ex.PRESETS, help="named parameter set")
    common.add_argument("--out", help="output file (default: stdout)")
    common.add_argument("--format", choices=("csv", "structured-text"), default=None)
    common.add_argument("--seed", type=_u64, default=None)

    ap = argparse.ArgumentParser(prog="pulsedom", description="Pulsed optomechanical measurement calculations")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("figure2", parents=[common], help="a priori conditional variance tables")
    sub.add_parser("figure3", parents=[common], help="a posteriori momentum variance vs budget")
    f = sub.add_parser("force", parents=[common], help="impulse-force sensitivity (needs a mass)")
    f.add_argument("--mass-kg", type=float, default=None)
    s = sub.add_parser("sweep", parents=[common], help="parameter sweep over a 1-D or 2-D grid")
    s.add_argument("--observable", choices=ex.OBSERVABLES)
    s.add_argument("--variable", choices=sorted(ex.SWEEP_VARIABLES))
    s.add_argument("--start", type=float)
    s.add_argument("--stop", type=float)
    s.add_argument("--points", type=int)
    s.add_argument("--scale", choices=("log", "linear"))
    s.add_argument("--workers", type=int, default=1)
    sub.add_parser("validate", parents=[common], help="run the invariant suite")
    o = sub.add_parser("oracle", parents=[common], help="engine vs trajectory-ensemble comparison")
    o.add_argument("--cases", type=int, default=100)
    o.add_argument("--paths", type=int, default=100_000)
    return ap


def _load(args) -> ex.ScenarioConfig:
    if args.config:
        cfg = ex.load_config(args.config)
    else:
        cfg = ex.preset(args.preset or DEFAULT_PRESET[args.command])
    if args.seed is not None:
        cfg.seed = args.seed
    if args.format is not None:
        cfg.outputs.format = args.format
    if args.out is not None:
        cfg.outputs.path = args.out
    return cfg


def run(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = _load(args)
        cmd = args.command
        status = 0
        if cmd == "figure2":
            rows = ex.figure2(cfg)
        elif cmd == "figure3":
            rows = ex.figure3(cfg)
        elif cmd == "force":
            if args.mass_kg is not None:
                cfg.oscillator.mass_kg = args.mass_kg
                cfg.validate()
            rows = [r.as_row() for r in ex.force_sensitivity(cfg)]
        elif cmd == "sweep":
            ax = cfg.sweep.axes[0]
            for name in ("variable", "start", "stop", "points", "scale"):
                if getattr(args, name) is not None:
                    setattr(ax, name, getattr(args, name))
            if args.observable:
                cfg.sweep.observable = args.observable
            cfg.validate()
            rows = ex.sweep(cfg, workers=args.workers)
        elif cmd == "validate":
            rows = [r.as_row() for r in run_all(cfg.seed)]
            status = 0 if all(r["passed"] for r in rows) else 1
        else:
            cases = ex.oracle_suite(args.cases, seed=20240 + cfg.seed)
            rows = []
            for c in cases:
                rows.append(ex.oracle_compare(c, n_paths=args.paths))
                print(f"case {len(rows)}/{len(cases)} z={rows[-1]['z_score']:+.2f}", file=sys.stderr, flush=True)
    except ex.ConfigError as exc:
        print(f"pulsedom: error: {exc}", file=sys.stderr)
        return 2
    text = ex.write_rows(rows, cfg.outputs.format, cfg.outputs.path, meta={"command": cmd})
    if cfg.outputs.path is None:
        sys.stdout.write(text)
    return status


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
