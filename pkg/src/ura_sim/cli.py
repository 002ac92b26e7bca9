"""``ura-sim`` command line.

Exit codes: 0 success, 1 invalid configuration or arguments, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ScenarioConfig, coerce_value, dump_scenario, load_preset, load_scenario, preset_names
from .errors import ConfigurationError
from .runner import SweepSpec, format_results, run_point, run_sweep, write_results

log = logging.getLogger("ura_sim")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class _ArgError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _ArgError(message)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="scenario JSON file or preset name")
    p.add_argument("--trials", type=int, help="trials per point (overrides the config)")
    p.add_argument("--seed", type=int, help="base seed (overrides the config)")
    p.add_argument("--out", type=Path, help="result file (default: stdout)")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--workers", type=int, default=1, help="parallel worker processes")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config field; dotted keys reach sub-configs (receiver.crp=true)")
    p.add_argument("--timing", action="store_true", help="fill the runtime column (not reproducible)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="ura-sim", description="Monte Carlo simulator for pilot-free unsourced random access.")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one scenario")
    _common(run)
    sw = sub.add_parser("sweep", help="sweep one scenario field")
    _common(sw)
    sw.add_argument("--param", help="field to sweep (default: the config's own sweep)")
    sw.add_argument("--values", help="comma-separated values")
    pr = sub.add_parser("presets", help="bundled scenarios")
    pr_sub = pr.add_subparsers(dest="action", required=True)
    pr_sub.add_parser("list", help="list preset names")
    show = pr_sub.add_parser("show", help="print a preset with defaults filled in")
    show.add_argument("name")
    return ap


def _resolve(args) -> ScenarioConfig:
    cfg = load_scenario(args.config)
    changes = {}
    for item in args.set:
        key, eq, text = item.partition("=")
        if not eq:
            raise ConfigurationError(f"--set expects KEY=VALUE, got {item!r}")
        changes[key.strip()] = coerce_value(cfg, key.strip(), text.strip())
    if args.trials is not None:
        changes["trials"] = args.trials
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.workers < 1:
        raise ConfigurationError("--workers must be >= 1")
    return cfg.replace(**changes) if changes else cfg


def _sweep_spec(args, cfg: ScenarioConfig) -> SweepSpec:
    if args.param is None:
        if cfg.sweep is None:
            raise ConfigurationError("--param is required: the config has no sweep")
        if args.values is not None:
            raise ConfigurationError("--values needs --param")
        return SweepSpec(cfg.sweep["param"], tuple(cfg.sweep["values"]), cfg.sweep.get("trials"))
    if not args.values:
        raise ConfigurationError("--values is required with --param")
    vals = tuple(coerce_value(cfg, args.param, v.strip()) for v in args.values.split(","))
    return SweepSpec(args.param, vals)


def _emit(rows, args, cfg: ScenarioConfig) -> None:
    eff = cfg.resolved()
    if args.out is None:
        sys.stdout.write(format_results(rows, args.format, eff))
        return
    write_results(rows, args.out, args.format, eff)
    side = args.out.with_name(args.out.name + ".config.json")
    side.write_text(json.dumps(eff, indent=2) + "\n")
    log.info("wrote %s and %s", args.out, side)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except _ArgError as exc:
        print(f"ura-sim: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(level=logging.DEBUG if getattr(args, "verbose", False) else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.command == "presets":
            if args.action == "list":
                for name in preset_names():
                    print(name)
            else:
                print(dump_scenario(load_preset(args.name)))
            return EXIT_OK
        cfg = _resolve(args)
        spec = _sweep_spec(args, cfg) if args.command == "sweep" else None
    except ConfigurationError as exc:
        print(f"ura-sim: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_INVALID

    log.info("effective config: %s", json.dumps(cfg.resolved(), sort_keys=True))
    try:
        if spec is None:
            rows = [run_point(cfg, workers=args.workers, timing=args.timing)]
        else:
            rows = run_sweep(cfg, spec, workers=args.workers, timing=args.timing)
        _emit(rows, args, cfg)
    except ConfigurationError as exc:
        print(f"ura-sim: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:
        print(f"ura-sim: run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
