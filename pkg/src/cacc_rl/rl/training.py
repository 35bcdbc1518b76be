"""Episode/update loop and deterministic evaluation."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from ..cf_models import IdmParams, base_accels
from ..errors import DataError
from ..rewards import RewardParams, RewardWeights
from ..sim import LeaderTrajectory, PlatoonEnv, SimConfig, run_episode
from .agents import Agent, AgentConfig, PolicyController
from .buffer import ReplayBuffer

LOG = logging.getLogger(__name__)

TRAIN_LOG_COLUMNS = ("episode", "step", "critic_loss", "actor_objective", "mean_eval_return", "collisions")

# Independent generator streams spawned from the master seed, in this order.
SEED_STREAMS = ("init", "exploration", "replay", "scenario", "target_noise")


def seed_streams(seed: int) -> dict[str, np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(len(SEED_STREAMS))
    return {name: np.random.default_rng(s) for name, s in zip(SEED_STREAMS, children)}


@dataclass
class EvalResult:
    mean_return: float
    collisions: int
    logs: list


def evaluate(actor, trajectories: Sequence[LeaderTrajectory], sim_config: SimConfig,
             weights: RewardWeights = RewardWeights(), params: RewardParams = RewardParams(),
             idm: IdmParams = IdmParams()) -> EvalResult:
    """Deterministic rollouts; return is the per-follower reward sum averaged over followers and runs."""
    ctrl = PolicyController(actor, "idm", idm=idm, dt=sim_config.dt)
    logs = [run_episode(sim_config, traj, ctrl, weights, params, idm) for traj in trajectories]
    return EvalResult(float(np.mean([log.mean_return() for log in logs])),
                      sum(int(log.collision) for log in logs), logs)


@dataclass
class TrainResult:
    agent: Agent
    rows: list = field(default_factory=list)
    initial_eval: Optional[EvalResult] = None
    steps: int = 0

    def eval_returns(self) -> list[float]:
        return [r["mean_eval_return"] for r in self.rows[1:] if r["mean_eval_return"] is not None]


def _fmt(v):
    if v is None:
        return ""
    return repr(v) if isinstance(v, float) else str(v)


def write_train_log(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRAIN_LOG_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in TRAIN_LOG_COLUMNS])


def train(sim_config: SimConfig, scenario_source: Sequence[LeaderTrajectory], algo: str,
          agent_config: AgentConfig = AgentConfig(), *, episodes: int = 150, eval_every: int = 5,
          eval_trajectories: Optional[Sequence[LeaderTrajectory]] = None, seed: int = 0,
          weights: RewardWeights = RewardWeights(), params: RewardParams = RewardParams(),
          idm: IdmParams = IdmParams(),
          on_episode: Optional[Callable[[dict], None]] = None,
          on_initial: Optional[Callable[[dict], None]] = None) -> TrainResult:
    """Off-policy training with one gradient update per environment step after warm-up.

    Each episode replays one leader trajectory drawn from ``scenario_source``.
    Row 0 of the returned log is the evaluation of the untrained policy;
    further evaluations run every ``eval_every`` episodes and after the last.
    """
    if not scenario_source:
        raise DataError("scenario source is empty")
    eval_trajectories = list(eval_trajectories or scenario_source[:1])
    rngs = seed_streams(seed)
    agent = Agent(algo, agent_config, rngs["init"])
    agent.rng = rngs["target_noise"]
    buffer = ReplayBuffer(agent_config.buffer_capacity, sim_config.n_followers, rng=rngs["replay"])
    env = PlatoonEnv(sim_config, weights, params, idm)

    initial = evaluate(agent.actor, eval_trajectories, sim_config, weights, params, idm)
    result = TrainResult(agent, initial_eval=initial)
    result.rows.append({"episode": 0, "step": 0, "critic_loss": None, "actor_objective": None,
                        "mean_eval_return": initial.mean_return, "collisions": initial.collisions})
    if on_initial is not None:
        on_initial(result.rows[0])
    steps = 0
    started = time.perf_counter()
    for ep in range(1, episodes + 1):
        traj = scenario_source[int(rngs["scenario"].integers(len(scenario_source)))]
        obs = env.reset(traj)
        losses, objectives = [], []
        train_collision = False
        while True:
            adj = agent.act(obs, explore=True, rng=rngs["exploration"])
            accels = base_accels("idm", obs, sim_config.dt, idm) + adj
            out = env.step(accels)
            # running out of leader trajectory is a time limit, not a terminal state
            buffer.add(obs, adj, out.rewards, out.observations, out.collision)
            steps += 1
            if steps >= agent_config.warmup_steps:
                diag = agent.update(buffer.sample(agent_config.batch_size))
                losses.append(diag["critic_loss"])
                if diag["actor_objective"] is not None:
                    objectives.append(diag["actor_objective"])
            obs = out.observations
            if out.done:
                train_collision = out.collision
                break
        row = {"episode": ep, "step": steps,
               "critic_loss": float(np.mean(losses)) if losses else None,
               "actor_objective": float(np.mean(objectives)) if objectives else None,
               "mean_eval_return": None, "collisions": None}
        if ep % eval_every == 0 or ep == episodes:
            ev = evaluate(agent.actor, eval_trajectories, sim_config, weights, params, idm)
            row["mean_eval_return"] = ev.mean_return
            row["collisions"] = ev.collisions
        result.rows.append(row)
        if train_collision:
            LOG.info("episode %d: training rollout collided", ep)
        LOG.debug("episode %d step %d eval %s (%.1fs)", ep, steps, row["mean_eval_return"],
                  time.perf_counter() - started)
        if on_episode is not None:
            on_episode(row)
    result.steps = steps
    return result
