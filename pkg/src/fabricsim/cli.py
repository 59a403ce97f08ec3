"""``fabricsim`` command line: run, sweep, analyze, timeline."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .config import ConfigError, parse_scenario
from .engine import RunResult, run_simulation
from .harness import SweepError, SweepSpec, emit, run_sweep, table_csv
from .metrics import MetricsError, classify, compute_metrics, export_timeline, timeline_csv


class CliError(Exception):
    pass


def _seed(args) -> int | None:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("FABRICSIM_SEED")
    if env is None or env == "":
        return None
    try:
        return int(env)
    except ValueError:
        raise CliError(f"FABRICSIM_SEED must be an integer, got {env!r}") from None


def _scenario(args):
    cfg = parse_scenario(args.config)
    changes = {}
    seed = _seed(args)
    if seed is not None:
        if seed < 0:
            raise CliError("seed must be >= 0")
        changes["seed"] = seed
    if getattr(args, "nodes", None) is not None:
        changes["topology.nodes"] = args.nodes
    if getattr(args, "coordination", None) is not None:
        changes["coordination.enabled"] = args.coordination == "on"
    if getattr(args, "repeats", None) is not None:
        changes["repeats"] = args.repeats
    return cfg.with_overrides(**changes) if changes else cfg


def _write(text: str, out):
    if out is None:
        sys.stdout.write(text)
        return
    try:
        Path(out).write_text(text)
    except OSError as err:
        raise CliError(f"cannot write {out}: {err}") from None


def _report(run: RunResult) -> dict:
    return {"metrics": compute_metrics(run).to_dict(), "diagnosis": classify(run).to_dict()}


def cmd_run(args):
    cfg = _scenario(args)
    run = run_simulation(cfg, keep_traces=True)
    if args.format == "csv":
        raise CliError("run output is JSON only; use --format json")
    run.metrics = _report(run)
    _write(run.to_json() + "\n", args.out)


def cmd_sweep(args):
    cfg = _scenario(args)
    nodes = [int(x) for x in args.node_counts.split(",")] if args.node_counts else [cfg.topology.nodes]
    if args.nodes is not None:
        nodes = [args.nodes]
    variants = ("baseline", "coordination")
    if args.coordination is not None:
        variants = ("coordination",) if args.coordination == "on" else ("baseline",)
    try:
        spec = SweepSpec(cfg, tuple(nodes), variants, args.repeats)
    except ValueError as err:
        raise CliError(str(err)) from None
    table = run_sweep(spec)
    if args.out is not None:
        emit(table, args.format, args.out)
    elif args.format == "csv":
        _write(table_csv(table), None)
    else:
        _write(json.dumps(table.to_dict(), sort_keys=True, indent=2) + "\n", None)


def _load_run(path) -> RunResult:
    p = Path(path)
    if not p.is_file():
        raise CliError(f"{p}: no such file")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as err:
        raise CliError(f"{p}: malformed JSON ({err})") from None
    try:
        return RunResult.from_dict(data)
    except (KeyError, TypeError) as err:
        raise CliError(f"{p}: not a saved run ({err})") from None


def cmd_analyze(args):
    run = _load_run(args.run)
    _write(json.dumps(_report(run), sort_keys=True, indent=2) + "\n", args.out)


def cmd_timeline(args):
    if args.run is not None:
        run = _load_run(args.run)
    else:
        if args.config is None:
            raise CliError("timeline needs --run or --config")
        run = run_simulation(_scenario(args), keep_traces=True)
    spans = export_timeline(run, args.iteration)
    if args.format == "json":
        text = json.dumps([s.__dict__ for s in spans], indent=2) + "\n"
    else:
        text = timeline_csv(spans)
    _write(text, args.out)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fabricsim", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="scenario JSON file")
        sp.add_argument("--seed", type=int, help="seed (falls back to FABRICSIM_SEED, then the config)")
        sp.add_argument("--nodes", type=int, help="override topology.nodes")
        sp.add_argument("--coordination", choices=("on", "off"), help="override coordination.enabled")
        sp.add_argument("--repeats", type=int, help="repeats per sweep point")
        sp.add_argument("--out", help="output file (default stdout)")

    sp = sub.add_parser("run", help="run one scenario and print the RunResult as JSON")
    common(sp)
    sp.add_argument("--format", choices=("json", "csv"), default="json")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("sweep", help="node-count sweep, baseline vs coordination")
    common(sp)
    sp.add_argument("--node-counts", help="comma separated, e.g. 4,8,16,32,64")
    sp.add_argument("--format", choices=("csv", "json"), default="csv")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("analyze", help="metrics and failure modes of a saved run")
    sp.add_argument("--run", required=True, help="RunResult JSON written by `run`")
    sp.add_argument("--out")
    sp.add_argument("--format", choices=("json",), default="json")
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("timeline", help="per-rank phase spans of one iteration")
    common(sp, config_required=False)
    sp.add_argument("--run", help="saved RunResult JSON instead of --config")
    sp.add_argument("--iteration", type=int, default=0)
    sp.add_argument("--format", choices=("csv", "json"), default="csv")
    sp.set_defaults(func=cmd_timeline)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except (CliError, ConfigError, SweepError, MetricsError, IndexError, ValueError) as err:
        print(f"fabricsim: error: {err}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
