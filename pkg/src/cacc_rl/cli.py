"""Command-line entry point: ``cacc-rl {convert,simulate,train,compare,make-fixture}``.

Exit codes: 0 on success, 1 on a runtime failure, 2 on a usage or
configuration error.
"""
from __future__ import annotations

import argparse
import logging
import shutil
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .config import ExperimentConfig, dump_config, load_config
from .data import convert_dataset, make_ngsim_fixture
from .errors import CaccError, CheckpointError, ConfigError, UsageError
from .metrics import write_metrics_csv
from .workflow import (
    resolve_controller,
    run_controller,
    safe_name,
    scenario_trajectories,
    train_to_dir,
    write_messages_csv,
)

LOG = logging.getLogger("cacc_rl")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
SIMULATE_EXTRA = ("scenario", "seed", "episodes", "collisions", "mean_return")
COMPARE_EXTRA = SIMULATE_EXTRA


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, help="YAML or JSON experiment config")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted config override, e.g. agent.gamma=0.95 (repeatable)")
    p.add_argument("-v", "--verbose", action="count", default=0)
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="cacc-rl", description="Communication-aware RL for platoon car following")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("convert", parents=[common], help="raw NGSIM-style CSV to trajectories + split")
    p.add_argument("--input", help="raw CSV (default: data.input)")
    p.add_argument("--units", choices=("feet", "meters"), help="input units (default: data.units)")

    p = sub.add_parser("simulate", parents=[common], help="roll out one controller on one scenario")
    p.add_argument("--controller", required=True, help="idm, krauss, or a checkpoint path")
    p.add_argument("--scenario", help="scenario name, train/test, or a trajectory CSV")
    p.add_argument("--messages", action="store_true", help="also write per-tick message CSVs")

    p = sub.add_parser("train", parents=[common], help="train an agent")
    p.add_argument("--algo", choices=("ddpg", "td3", "ca-ddpg", "ca-td3"))
    p.add_argument("--episodes", type=int)

    p = sub.add_parser("compare", parents=[common], help="controllers x scenarios metrics table")
    p.add_argument("--controllers", required=True, help="comma-separated controller list")
    p.add_argument("--scenarios", help="comma-separated scenario list (default: train.eval_scenarios)")

    p = sub.add_parser("make-fixture", parents=[common], help="write a synthetic NGSIM-format CSV")
    p.add_argument("--vehicles", type=int, default=10)
    p.add_argument("--duration", type=float, default=90.0)
    p.add_argument("--noise", type=float, default=0.0, help="uniform position noise half-width (m)")
    p.add_argument("--units", choices=("feet", "meters"), default="feet")
    return parser


def _load(args, extra_overrides=()) -> ExperimentConfig:
    return load_config(args.config, list(args.overrides) + list(extra_overrides), args.seed)


def _out_dir(args, cfg: ExperimentConfig, default: str) -> Path:
    out = args.out if args.out is not None else Path(cfg.output.dir) / default
    out.mkdir(parents=True, exist_ok=True)
    return out


def archive_config(args, cfg: ExperimentConfig, out: Path) -> None:
    """Copy the config file byte for byte and write the fully resolved config beside it."""
    if args.config is not None:
        shutil.copyfile(args.config, out / f"config.source{args.config.suffix or '.yaml'}")
    (out / "config.resolved.yaml").write_text(dump_config(cfg))


def _split_list(text: Optional[str]) -> list[str]:
    return [t.strip() for t in (text or "").split(",") if t.strip()]


# -- commands -----------------------------------------------------------------------

def cmd_convert(args) -> int:
    extra = [f"data.units={args.units}"] if args.units else []
    cfg = _load(args, extra)
    source = args.input or cfg.data.input
    if source is None:
        raise UsageError("convert needs --input or data.input")
    out = args.out if args.out is not None else Path(cfg.data.dir or Path(cfg.output.dir) / "data")
    out.mkdir(parents=True, exist_ok=True)
    d = cfg.data
    manifest, report = convert_dataset(source, out, d.schema_map, d.units, d.min_duration, cfg.sim.dt,
                                       d.frame_dt, d.window, cfg.seed, d.train_fraction)
    archive_config(args, cfg, out)
    print(f"{len(manifest.train_ids)} train / {len(manifest.test_ids)} test trajectories -> {out}; "
          f"{report.rows_skipped} of {report.rows_total} rows skipped")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _load(args)
    scenario = args.scenario or cfg.train.eval_scenarios[0]
    record = args.messages or cfg.output.messages
    resolved = resolve_controller(cfg, args.controller, record_messages=record)
    run = run_controller(cfg, resolved, scenario)
    out = _out_dir(args, cfg, "simulate")
    archive_config(args, cfg, out)
    stem = f"{safe_name(resolved.name)}_{safe_name(scenario)}"
    for k, log in enumerate(run.logs):
        log.to_csv(out / f"{stem}_{k:03d}.csv")
        if record and run.messages[k]:
            write_messages_csv(out / f"{stem}_{k:03d}_messages.csv", run.messages[k], cfg.sim.dt)
    write_metrics_csv(out / f"{stem}_metrics.csv", [run.row], SIMULATE_EXTRA)
    print(f"{resolved.name} on {scenario}: {len(run.logs)} episode(s), "
          f"{run.row['collisions']} collision(s) -> {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    extra = []
    if args.algo:
        extra.append(f"train.algo={args.algo}")
    if args.episodes is not None:
        extra.append(f"train.episodes={args.episodes}")
    cfg = _load(args, extra)
    out = _out_dir(args, cfg, "train")
    archive_config(args, cfg, out)

    def progress(row):
        if row["mean_eval_return"] is not None:
            LOG.info("episode %d: eval return %.3f, collisions %s", row["episode"],
                     row["mean_eval_return"], row["collisions"])

    result = train_to_dir(cfg, out, progress)
    returns = result.eval_returns()
    last = f", last eval {returns[-1]:.3f}" if returns else ""
    print(f"{cfg.train.algo}: {cfg.train.episodes} episodes, untrained eval "
          f"{result.initial_eval.mean_return:.3f}{last} -> {out}")
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = _load(args)
    controllers = _split_list(args.controllers)
    scenarios = _split_list(args.scenarios) or list(cfg.train.eval_scenarios)
    if not controllers:
        raise UsageError("--controllers is empty")
    if not scenarios:
        raise UsageError("no scenarios to compare on")
    # resolve everything before running anything
    resolved = [resolve_controller(cfg, c) for c in controllers]
    for s in scenarios:
        scenario_trajectories(cfg, s)
    rows = [run_controller(cfg, r, s).row for r in resolved for s in scenarios]
    out = _out_dir(args, cfg, "compare")
    archive_config(args, cfg, out)
    write_metrics_csv(out / "compare.csv", rows, COMPARE_EXTRA)
    print(f"{len(resolved)} controller(s) x {len(scenarios)} scenario(s) -> {out / 'compare.csv'}")
    return EXIT_OK


def cmd_make_fixture(args) -> int:
    cfg = _load(args)
    out = _out_dir(args, cfg, "fixture")
    path = out / "ngsim_fixture.csv"
    make_ngsim_fixture(path, args.vehicles, args.duration, cfg.seed, args.units, cfg.data.frame_dt,
                       args.noise)
    print(f"wrote {path}")
    return EXIT_OK


COMMANDS = {
    "convert": cmd_convert,
    "simulate": cmd_simulate,
    "train": cmd_train,
    "compare": cmd_compare,
    "make-fixture": cmd_make_fixture,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"cacc-rl: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"cacc-rl: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CaccError, OSError) as exc:
        kind = "checkpoint" if isinstance(exc, CheckpointError) else "runtime"
        print(f"cacc-rl: {kind} failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
