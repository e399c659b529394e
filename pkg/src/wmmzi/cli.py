"""Command-line front end: ``wmmzi simulate|analyze|reproduce|validate``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import scenarios
from .config import FIGURES, ConfigError, ScenarioConfig, figure_config, load_config

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


def _run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, help="override the configured master seed")
    p.add_argument("--out", type=Path, help="output directory (default: the config's output_dir)")
    p.add_argument("--threads", type=int, default=1, help="worker threads for scan points (default 1)")
    p.add_argument("--deterministic", action="store_true", help="omit timestamps from SVG metadata")
    p.add_argument("--event-log", action="store_true", help="also write the g2 run's detection event log")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="wmmzi", description="Weak-measurement Mach-Zehnder photon simulator")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run the scenario described by a YAML config")
    p.add_argument("config", type=Path)
    _run_flags(p)

    p = sub.add_parser("reproduce", help="run a bundled figure configuration")
    p.add_argument("figure", choices=sorted(FIGURES))
    _run_flags(p)

    p = sub.add_parser("analyze", help="fit a scan table or correlate a time-tag file")
    p.add_argument("input", type=Path, help="scan.csv or a time-tag/event-log .txt")
    p.add_argument("--out", type=Path, help="output directory (default: next to the input)")
    p.add_argument("--reflectance", type=float, help="R used as D (default: from scan.json)")
    p.add_argument("--reflectance-error", type=float, default=0.0)
    p.add_argument("--dark-cps", type=float, help="APD3 dark rate to subtract (default: from scan.json, else 0)")
    kind = p.add_mutually_exclusive_group()
    kind.add_argument("--lateral", dest="lateral", action="store_true", default=None)
    kind.add_argument("--longitudinal", dest="lateral", action="store_false")
    p.add_argument("--bin-ns", type=float, default=3.0)
    p.add_argument("--window-ns", type=float, default=300.0)
    p.add_argument("--trace-bin-ms", type=float, default=100.0)

    p = sub.add_parser("validate", help="check a config without running it")
    p.add_argument("config", type=Path)
    return ap


def _with_overrides(cfg: ScenarioConfig, args) -> ScenarioConfig:
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be >= 0")
        cfg = cfg.model_copy(update={"seed": args.seed})
    if args.threads < 1:
        raise ConfigError("--threads must be >= 1")
    return cfg


def _simulate(cfg: ScenarioConfig, args, default_out: Path | None = None) -> int:
    cfg = _with_overrides(cfg, args)
    out = args.out or default_out or Path(cfg.output_dir)
    result = scenarios.run(cfg, out, threads=args.threads, deterministic=args.deterministic,
                           event_log=args.event_log)
    print(result.summary)
    return EXIT_OK


def _analyze(args) -> int:
    src: Path = args.input
    if not src.exists():
        raise ConfigError(f"{src}: no such file")
    out = scenarios._outdir(args.out or src.parent)
    if src.suffix.lower() == ".csv":
        result = scenarios.analyze_scan(src, out, args.reflectance, args.reflectance_error, args.dark_cps,
                                        args.lateral)
    else:
        result = scenarios.analyze_tags(src, out, args.bin_ns, args.window_ns, args.trace_bin_ms)
    print(result.summary)
    return EXIT_OK


def dispatch(args) -> int:
    if args.command == "validate":
        cfg = load_config(args.config)
        print(f"{args.config}: ok ({cfg.scenario}, seed {cfg.seed})")
        return EXIT_OK
    if args.command == "simulate":
        return _simulate(load_config(args.config), args)
    if args.command == "reproduce":
        return _simulate(figure_config(args.figure), args, Path("out") / args.figure)
    return _analyze(args)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return dispatch(args)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, RuntimeError, OSError, KeyError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
