"""DDPG and TD3 agents (plain or communication-aware) and the policy controller."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from ..cf_models import IdmParams, KraussParams, base_accels
from ..comm import delayed_mode_step, zero_messages
from ..errors import NumericError, UsageError
from ..nn import AdamState, adam_step, load_checkpoint, save_checkpoint, soft_update
from .buffer import Batch
from .networks import (
    OBS_SCALE,
    CaActor,
    CaCritic,
    PlainActor,
    PlainCritic,
    actor_from_description,
    critic_from_description,
)

LOG = logging.getLogger(__name__)

ALGOS = ("ddpg", "td3", "ca-ddpg", "ca-td3")


@dataclass
class TD3Config:
    policy_delay: int = 2
    target_noise_std: float = 0.2
    target_noise_clip: float = 0.5


@dataclass
class AgentConfig:
    gamma: float = 0.99
    batch_size: int = 64
    warmup_steps: int = 1000
    exploration_noise_std: float = 0.1
    action_bound: float = 2.0
    tau: float = 0.005
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    buffer_capacity: int = 100_000
    d_msg: int = 8
    trunk_hidden: tuple = (64, 64)
    msg_hidden: tuple = (32, 32)
    td3: TD3Config = field(default_factory=TD3Config)

    def __post_init__(self):
        if isinstance(self.td3, dict):
            self.td3 = TD3Config(**self.td3)
        self.trunk_hidden = tuple(self.trunk_hidden)
        self.msg_hidden = tuple(self.msg_hidden)
        if not 0.0 <= self.gamma <= 1.0:
            raise UsageError("gamma must lie in [0, 1]")
        if not self.action_bound > 0:
            raise UsageError("action_bound must be positive")
        if self.batch_size < 1:
            raise UsageError("batch_size must be >= 1")


class Agent:
    """Actor, one or two critics, their target copies and optimizers."""

    def __init__(self, algo: str, config: AgentConfig = AgentConfig(),
                 rng: Optional[np.random.Generator] = None):
        if algo not in ALGOS:
            raise UsageError(f"unknown algorithm {algo!r}; expected one of {ALGOS}")
        self.algo = algo
        self.config = config
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.twin = algo.endswith("td3")
        self.ca = algo.startswith("ca-")
        c = config
        if self.ca:
            self.actor = CaActor.create(c.d_msg, c.msg_hidden, c.action_bound, self.rng)
            self.critics = [CaCritic.create(c.d_msg, c.msg_hidden, c.action_bound, self.rng,
                                            name=f"critic{k + 1}") for k in range(2 if self.twin else 1)]
        else:
            self.actor = PlainActor.create(c.trunk_hidden, c.action_bound, self.rng)
            self.critics = [PlainCritic.create(c.trunk_hidden, c.action_bound, self.rng, name=f"critic{k + 1}")
                            for k in range(2 if self.twin else 1)]
        self._make_targets()
        self.updates = 0
        self.meta: dict = {}

    def _make_targets(self):
        c = self.config
        self.actor_target = self.actor.clone()
        self.critic_targets = [q.clone() for q in self.critics]
        self.actor_opt = {k: AdamState(lr=c.actor_lr) for k in self.actor.params()}
        self.critic_opts = [{k: AdamState(lr=c.critic_lr) for k in q.params()} for q in self.critics]

    # -- acting --------------------------------------------------------------

    def act(self, observations, explore: bool = False, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        """Acceleration adjustment of every follower for an ``(N, 4)`` observation array."""
        adj, _ = self.actor.forward(observations)
        if not np.all(np.isfinite(adj)):
            raise NumericError(f"actor produced non-finite actions: {adj}")
        if explore:
            rng = rng if rng is not None else self.rng
            bound = self.config.action_bound
            adj = np.clip(adj + rng.normal(0.0, self.config.exploration_noise_std, adj.shape), -bound, bound)
        return adj

    # -- learning ------------------------------------------------------------

    def td_target(self, batch: Batch, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        """``y = r + gamma * Q'(o', pi'(o'))``, bootstrap dropped on terminal steps."""
        c = self.config
        next_act, _ = self.actor_target.forward(batch.next_obs)
        if self.twin and c.td3.target_noise_std > 0:
            rng = rng if rng is not None else self.rng
            noise = np.clip(rng.normal(0.0, c.td3.target_noise_std, next_act.shape),
                            -c.td3.target_noise_clip, c.td3.target_noise_clip)
            next_act = np.clip(next_act + noise, -c.action_bound, c.action_bound)
        q_next = self.critic_targets[0].forward(batch.next_obs, next_act)[0]
        for q_t in self.critic_targets[1:]:
            q_next = np.minimum(q_next, q_t.forward(batch.next_obs, next_act)[0])
        mask = (~np.asarray(batch.done, dtype=bool)).astype(float)[:, None]
        return batch.rewards + c.gamma * mask * q_next

    def _critic_step(self, critic, opts, batch: Batch, y: np.ndarray) -> float:
        q, cache = critic.forward(batch.obs, batch.actions)
        diff = q - y
        # one squared-error term per follower, summed over positions, averaged over the batch
        n_batch = diff.shape[0]
        loss = float(np.sum(diff ** 2) / n_batch)
        if not np.isfinite(loss):
            raise NumericError(f"critic loss is {loss}")
        critic.backward(cache, 2.0 * diff / n_batch)
        for name, ps in critic.params().items():
            adam_step(ps, opts[name])
        return loss

    def _actor_step(self, batch: Batch) -> float:
        act, a_cache = self.actor.forward(batch.obs)
        critic = self.critics[0]
        q, q_cache = critic.forward(batch.obs, act)
        objective = float(np.sum(q) / q.shape[0])
        # ascend the per-sample sum of follower Q-values
        g_act = critic.backward(q_cache, np.full(q.shape, -1.0 / q.shape[0]))
        for ps in critic.params().values():
            ps.zero_grad()
        self.actor.backward(a_cache, g_act)
        for name, ps in self.actor.params().items():
            adam_step(ps, self.actor_opt[name])
        return objective

    def _soft_update_all(self, actor: bool = True):
        tau = self.config.tau
        for q, q_t in zip(self.critics, self.critic_targets):
            for (_, p), (_, p_t) in zip(q.params().items(), q_t.params().items()):
                soft_update(p_t, p, tau)
        if actor:
            for (_, p), (_, p_t) in zip(self.actor.params().items(), self.actor_target.params().items()):
                soft_update(p_t, p, tau)

    def update(self, batch: Batch) -> dict:
        self.updates += 1
        if self.twin:
            return td3_update(self, batch, self.updates)
        return ddpg_update(self, batch)

    # -- persistence ---------------------------------------------------------

    def paramsets(self) -> dict:
        out = dict(self.actor.params())
        for q in self.critics:
            out.update(q.params())
        return out

    def metadata(self) -> dict:
        cfg = asdict(self.config)
        return {
            "algo": self.algo,
            "actor": self.actor.describe(),
            "critics": [q.describe() for q in self.critics],
            "obs_scale": OBS_SCALE.tolist(),
            "agent_config": cfg,
        }

    def save(self, path, extra_metadata: Optional[dict] = None) -> None:
        meta = self.metadata()
        if extra_metadata:
            meta.update(extra_metadata)
        save_checkpoint(self.paramsets(), path, meta)

    @classmethod
    def load(cls, path, rng: Optional[np.random.Generator] = None) -> "Agent":
        params, meta = load_checkpoint(path)
        cfg = dict(meta["agent_config"])
        agent = cls.__new__(cls)
        agent.algo = meta["algo"]
        agent.config = AgentConfig(**cfg)
        agent.rng = rng if rng is not None else np.random.default_rng(0)
        agent.twin = agent.algo.endswith("td3")
        agent.ca = agent.algo.startswith("ca-")
        agent.actor = actor_from_description(meta["actor"], params)
        agent.critics = [critic_from_description(info, params, f"critic{k + 1}", agent.config.action_bound)
                         for k, info in enumerate(meta["critics"])]
        agent._make_targets()
        agent.updates = 0
        agent.meta = meta
        return agent


def ddpg_update(agent: Agent, batch: Batch) -> dict:
    """Critic regression to the TD target, deterministic policy gradient, soft target blend."""
    y = agent.td_target(batch)
    loss = agent._critic_step(agent.critics[0], agent.critic_opts[0], batch, y)
    objective = agent._actor_step(batch)
    agent._soft_update_all()
    return {"critic_loss": loss, "actor_objective": objective, "actor_updated": True}


def td3_update(agent: Agent, batch: Batch, step: int) -> dict:
    """Twin critics against the clipped-double target; delayed actor and target updates."""
    y = agent.td_target(batch)
    losses = [agent._critic_step(q, opts, batch, y) for q, opts in zip(agent.critics, agent.critic_opts)]
    out = {"critic_loss": float(np.mean(losses)), "actor_objective": None, "actor_updated": False}
    if step % agent.config.td3.policy_delay == 0:
        out["actor_objective"] = agent._actor_step(batch)
        out["actor_updated"] = True
        agent._soft_update_all()
    return out


class PolicyController:
    """Car-following prior plus a learned adjustment, as a simulation controller.

    ``mode="delayed"`` replaces the synchronous sweep with one-tick-old
    neighbour messages (communication-aware actors only).
    """

    def __init__(self, actor, base_model: str = "idm", idm: IdmParams = IdmParams(),
                 krauss: KraussParams = KraussParams(), dt: float = 0.1, mode: str = "sync",
                 record_messages: bool = False, name: str = "policy"):
        if mode not in ("sync", "delayed"):
            raise UsageError("mode must be 'sync' or 'delayed'")
        if mode == "delayed" and not isinstance(actor, CaActor):
            raise UsageError("delayed messaging needs a communication-aware actor")
        self.actor = actor
        self.base_model = base_model
        self.idm, self.krauss, self.dt = idm, krauss, dt
        self.mode = mode
        self.record_messages = record_messages
        self.name = name
        self.messages: list = []
        self._prev = None
        self._tick = 0

    def reset(self, platoon=None) -> None:
        self.messages = []
        self._prev = None
        self._tick = 0

    def adjustment(self, observations: np.ndarray) -> np.ndarray:
        if self.mode == "delayed":
            nets = self.actor.nets
            if self._prev is None:
                self._prev = zero_messages(len(observations), nets.d_msg)
            adj, self._prev = delayed_mode_step(np.asarray(observations) / OBS_SCALE, nets, self._prev)
            f_msg, b_msg = self._prev
        else:
            if self.record_messages and isinstance(self.actor, CaActor):
                adj, (res, _) = self.actor.forward(observations)
                d = self.actor.nets.d_msg
                f_msg, b_msg = res.forward_messages[0][:, :d], res.backward_messages[0]
            else:
                adj = self.actor.forward(observations)[0]
                f_msg = b_msg = None
        if self.record_messages and f_msg is not None:
            self.messages.append((self._tick, np.array(f_msg), np.array(b_msg)))
        self._tick += 1
        if not np.all(np.isfinite(adj)):
            raise NumericError(f"policy produced non-finite adjustments: {adj}")
        return adj

    def __call__(self, platoon, observations: np.ndarray) -> np.ndarray:
        base = base_accels(self.base_model, observations, self.dt, self.idm, self.krauss)
        return base + self.adjustment(observations)
