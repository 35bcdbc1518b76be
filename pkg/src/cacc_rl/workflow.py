"""Glue between a validated ExperimentConfig and the simulation, training and data modules."""
from __future__ import annotations

import csv
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .cf_models import MODELS, CarFollowingController
from .config import ExperimentConfig
from .data import load_split, read_trajectory
from .errors import ConfigError, UsageError
from .metrics import aggregate, compute_metrics
from .rl.agents import Agent, PolicyController
from .rl.networks import CaActor
from .sim import LeaderTrajectory, make_scenario, run_episode

LOG = logging.getLogger(__name__)

MESSAGE_CSV_HEADER = ("t", "vehicle", "direction", "dim", "value")


def scenario_trajectories(cfg: ExperimentConfig, name: str) -> list[LeaderTrajectory]:
    """A named scenario from the config, a data split (``train``/``test``), or a trajectory CSV."""
    if name in cfg.scenarios:
        spec = cfg.scenarios[name].model_dump()
        kind = spec.pop("kind")
        return [make_scenario(kind, dt=cfg.sim.dt, **spec)]
    if name in ("train", "test"):
        if cfg.data.dir is None:
            raise ConfigError(f"scenario {name!r} needs data.dir pointing at a converted dataset")
        if not (Path(cfg.data.dir) / "manifest.csv").is_file():
            raise ConfigError(f"data.dir {cfg.data.dir!r} has no manifest.csv; run convert first")
        trajs = load_split(cfg.data.dir, name)
        if not trajs:
            raise ConfigError(f"the {name} split of {cfg.data.dir} is empty")
        return trajs
    if name.endswith(".csv") and Path(name).is_file():
        return [read_trajectory(name)]
    raise ConfigError(f"unknown scenario {name!r}; known: {sorted(cfg.scenarios)} or train/test")


def check_checkpoint_matches(cfg: ExperimentConfig, agent: Agent, path) -> None:
    """The checkpoint's message width and layer sizes must agree with the config."""
    if not agent.ca:
        hidden = list(agent.config.trunk_hidden)
        if hidden != list(cfg.agent.trunk_hidden):
            raise ConfigError(f"{path}: checkpoint hidden sizes {hidden} differ from "
                              f"agent.trunk_hidden {cfg.agent.trunk_hidden}")
        return
    d = agent.actor.nets.d_msg
    if d != cfg.comm.d_msg:
        raise ConfigError(f"{path}: checkpoint was trained with d_msg={d} but the config has comm.d_msg="
                          f"{cfg.comm.d_msg}")
    hidden = list(agent.config.msg_hidden)
    if hidden != list(cfg.agent.msg_hidden):
        raise ConfigError(f"{path}: checkpoint hidden sizes {hidden} differ from agent.msg_hidden "
                          f"{cfg.agent.msg_hidden}")


@dataclass
class ResolvedController:
    name: str
    controller: object
    seed: Optional[int]


def resolve_controller(cfg: ExperimentConfig, spec: str, record_messages: bool = False) -> ResolvedController:
    if spec in MODELS:
        ctrl = CarFollowingController(spec, cfg.idm_params(), cfg.krauss_params(), cfg.sim.dt)
        return ResolvedController(spec, ctrl, cfg.seed)
    path = Path(spec)
    if not path.is_file():
        raise UsageError(f"unknown controller {spec!r}: expected one of {MODELS} or a checkpoint file")
    agent = Agent.load(path)
    check_checkpoint_matches(cfg, agent, path)
    mode = cfg.comm.mode if isinstance(agent.actor, CaActor) else "sync"
    ctrl = PolicyController(agent.actor, "idm", cfg.idm_params(), cfg.krauss_params(), cfg.sim.dt,
                            mode=mode, record_messages=record_messages, name=agent.algo)
    seed = agent.meta.get("seed")
    return ResolvedController(agent.algo, ctrl, seed)


@dataclass
class ScenarioRun:
    model: str
    scenario: str
    seed: Optional[int]
    logs: list
    messages: list
    row: dict


def run_controller(cfg: ExperimentConfig, resolved: ResolvedController, scenario: str) -> ScenarioRun:
    """Deterministic rollouts of one controller over every trajectory of one scenario."""
    trajs = scenario_trajectories(cfg, scenario)
    sim_cfg = cfg.sim_config()
    logs, messages, reports = [], [], []
    for traj in trajs:
        log = run_episode(sim_cfg, traj, resolved.controller, cfg.reward_weights(), cfg.reward_params(),
                          cfg.idm_params())
        logs.append(log)
        messages.append(list(getattr(resolved.controller, "messages", [])))
        reports.append(compute_metrics(log, tuple(cfg.metrics.ttc_thresholds), cfg.metrics.h_cap))
    row = aggregate(reports).row(resolved.name)
    row.update({"scenario": scenario, "seed": resolved.seed, "episodes": len(logs),
                "collisions": sum(int(lg.collision) for lg in logs),
                "mean_return": sum(lg.mean_return() for lg in logs) / len(logs)})
    return ScenarioRun(resolved.name, scenario, resolved.seed, logs, messages, row)


def safe_name(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", text)


def write_messages_csv(path, messages, dt: float) -> None:
    """Per-tick messages: ``direction`` F is toward the head, B toward the tail; vehicles count from 1."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(MESSAGE_CSV_HEADER)
        for tick, f_msg, b_msg in messages:
            t = repr(tick * dt)
            for direction, arr in (("F", f_msg), ("B", b_msg)):
                for i, vec in enumerate(arr.tolist()):
                    for k, value in enumerate(vec):
                        w.writerow([t, i + 1, direction, k, repr(value)])


# -- training -----------------------------------------------------------------------

INCOMPLETE_MARKER = "INCOMPLETE"
CHECKPOINT_NAME = "checkpoint.ckpt"
TRAIN_LOG_NAME = "training_log.csv"


def training_sources(cfg: ExperimentConfig) -> tuple[list, list]:
    if cfg.train.source == "data":
        return scenario_trajectories(cfg, "train"), scenario_trajectories(cfg, "test")
    train = [t for name in cfg.train.train_scenarios for t in scenario_trajectories(cfg, name)]
    evals = [t for name in cfg.train.eval_scenarios for t in scenario_trajectories(cfg, name)]
    if not train:
        raise ConfigError("train.train_scenarios is empty")
    return train, evals or train[:1]


def train_to_dir(cfg: ExperimentConfig, out_dir, on_episode=None):
    """Train and write ``checkpoint.ckpt`` and ``training_log.csv`` under ``out_dir``.

    While running, an ``INCOMPLETE`` marker exists and the log is written to
    ``training_log.csv.partial``; both are resolved only after the
    checkpoint has been written.
    """
    from .rl.training import TRAIN_LOG_COLUMNS, _fmt, train

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    marker = out / INCOMPLETE_MARKER
    marker.write_text("training in progress; outputs in this directory are not final\n")
    for stale in (out / CHECKPOINT_NAME, out / TRAIN_LOG_NAME):
        if stale.exists():
            stale.unlink()
    train_trajs, eval_trajs = training_sources(cfg)
    partial = out / (TRAIN_LOG_NAME + ".partial")
    with open(partial, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRAIN_LOG_COLUMNS)

        def record(row):
            writer.writerow([_fmt(row[c]) for c in TRAIN_LOG_COLUMNS])
            fh.flush()
            if on_episode is not None:
                on_episode(row)

        result = train(cfg.sim_config(), train_trajs, cfg.train.algo, cfg.agent_config(),
                       episodes=cfg.train.episodes, eval_every=cfg.train.eval_every,
                       eval_trajectories=eval_trajs, seed=cfg.seed, weights=cfg.reward_weights(),
                       params=cfg.reward_params(), idm=cfg.idm_params(), on_episode=record,
                       on_initial=record)
    result.agent.save(out / CHECKPOINT_NAME, {"seed": cfg.seed, "n_followers": cfg.sim.n_followers,
                                              "episodes": cfg.train.episodes})
    partial.replace(out / TRAIN_LOG_NAME)
    marker.unlink()
    return result
