"""Actor and critic wrappers with one batched interface for plain and communication-aware variants.

Observations enter as ``(B, N, 4)`` arrays and are divided by fixed
scales before reaching any network; critics see actions divided by the
action bound.
"""
from __future__ import annotations

from typing import Optional

import numpy as np

from ..comm import CaActorNets, CaCriticNets, actor_sweep, critic_sweep, sweep_backward
from ..nn import Mlp, MlpSpec, ParamSet

# speed (m/s), acceleration (m/s^2), gap (m), relative speed (m/s)
OBS_SCALE = np.array([30.0, 3.0, 50.0, 10.0])
ACTION_INIT_SCALE = 1e-3


def _as_batch(obs):
    obs = np.asarray(obs, dtype=float)
    return (obs[None], True) if obs.ndim == 2 else (obs, False)


class PlainActor:
    """Per-vehicle policy network; followers share it but never communicate."""

    def __init__(self, mlp: Mlp, action_bound: float):
        self.mlp = mlp
        self.action_bound = action_bound

    @classmethod
    def create(cls, hidden=(64, 64), action_bound: float = 2.0, rng=None):
        spec = MlpSpec(4, tuple(hidden), 1, output_activation="tanh", output_scale=action_bound)
        return cls(Mlp(spec, rng=rng, final_scale=ACTION_INIT_SCALE), action_bound)

    def forward(self, obs):
        obs, single = _as_batch(obs)
        b, n, _ = obs.shape
        out, tape = self.mlp.forward((obs / OBS_SCALE).reshape(b * n, 4))
        act = out.reshape(b, n)
        return (act[0] if single else act), (tape, b, n, single)

    def backward(self, cache, g_actions) -> None:
        tape, b, n, single = cache
        self.mlp.backward(tape, np.asarray(g_actions, dtype=float).reshape(b * n, 1))

    def params(self) -> dict[str, ParamSet]:
        return {"actor.mlp": self.mlp.params}

    def describe(self) -> dict:
        return {"type": "plain", "action_bound": self.action_bound, "mlp": self.mlp.spec.to_dict()}

    def clone(self):
        return PlainActor(Mlp(self.mlp.spec, params=self.mlp.params.copy()), self.action_bound)


class CaActor:
    """Communication-aware policy: one synchronous message sweep per platoon."""

    def __init__(self, nets: CaActorNets):
        self.nets = nets
        self.action_bound = nets.head_bound

    @classmethod
    def create(cls, d_msg=8, msg_hidden=(32, 32), action_bound=2.0, rng=None):
        return cls(CaActorNets.create(4, d_msg, msg_hidden, msg_hidden, action_bound, rng))

    def forward(self, obs):
        obs, single = _as_batch(obs)
        res = actor_sweep(obs / OBS_SCALE, self.nets)
        return (res.outputs[0] if single else res.outputs), (res, single)

    def backward(self, cache, g_actions) -> None:
        res, single = cache
        g = np.asarray(g_actions, dtype=float)
        sweep_backward(res, g[None] if single else g)

    def params(self) -> dict[str, ParamSet]:
        return {f"actor.{k}": v for k, v in self.nets.params().items()}

    def describe(self) -> dict:
        return {"type": "ca", **self.nets.describe()}

    def clone(self):
        params = {k: v.copy() for k, v in self.nets.params().items()}
        return CaActor(CaActorNets.from_params(self.nets.describe(), params))


class PlainCritic:
    def __init__(self, mlp: Mlp, action_bound: float, name: str = "critic1"):
        self.mlp = mlp
        self.action_bound = action_bound
        self.name = name

    @classmethod
    def create(cls, hidden=(64, 64), action_bound=2.0, rng=None, name="critic1"):
        return cls(Mlp(MlpSpec(5, tuple(hidden), 1), rng=rng), action_bound, name)

    def forward(self, obs, actions):
        obs, single = _as_batch(obs)
        act = np.asarray(actions, dtype=float).reshape(obs.shape[:2])
        b, n, _ = obs.shape
        x = np.concatenate([obs / OBS_SCALE, (act / self.action_bound)[..., None]], axis=-1)
        out, tape = self.mlp.forward(x.reshape(b * n, 5))
        q = out.reshape(b, n)
        return (q[0] if single else q), (tape, b, n, single)

    def backward(self, cache, g_q) -> np.ndarray:
        """Accumulate parameter gradients; return the gradient with respect to the actions."""
        tape, b, n, single = cache
        gx = self.mlp.backward(tape, np.asarray(g_q, dtype=float).reshape(b * n, 1))
        ga = gx[:, 4].reshape(b, n) / self.action_bound
        return ga[0] if single else ga

    def params(self) -> dict[str, ParamSet]:
        return {f"{self.name}.mlp": self.mlp.params}

    def describe(self) -> dict:
        return {"type": "plain", "action_bound": self.action_bound, "mlp": self.mlp.spec.to_dict()}

    def clone(self):
        return PlainCritic(Mlp(self.mlp.spec, params=self.mlp.params.copy()), self.action_bound, self.name)


class CaCritic:
    def __init__(self, nets: CaCriticNets, action_bound: float, name: str = "critic1"):
        self.nets = nets
        self.action_bound = action_bound
        self.name = name

    @classmethod
    def create(cls, d_msg=8, msg_hidden=(32, 32), action_bound=2.0, rng=None, name="critic1"):
        return cls(CaCriticNets.create(4, d_msg, msg_hidden, msg_hidden, rng), action_bound, name)

    def forward(self, obs, actions):
        obs, single = _as_batch(obs)
        act = np.asarray(actions, dtype=float).reshape(obs.shape[:2])
        res = critic_sweep(obs / OBS_SCALE, act / self.action_bound, self.nets)
        return (res.outputs[0] if single else res.outputs), (res, single)

    def backward(self, cache, g_q) -> np.ndarray:
        res, single = cache
        g = np.asarray(g_q, dtype=float)
        gx = sweep_backward(res, g[None] if single else g)
        ga = gx[..., -1] / self.action_bound
        return ga[0] if single else ga

    def params(self) -> dict[str, ParamSet]:
        return {f"{self.name}.{k}": v for k, v in self.nets.params().items()}

    def describe(self) -> dict:
        return {"type": "ca", **self.nets.describe()}

    def clone(self):
        params = {k: v.copy() for k, v in self.nets.params().items()}
        return CaCritic(CaCriticNets.from_params(self.nets.describe(), params), self.action_bound, self.name)


def actor_from_description(info: dict, params: dict[str, ParamSet]):
    if info["type"] == "plain":
        return PlainActor(Mlp(MlpSpec(**info["mlp"]), params=params["actor.mlp"]), info["action_bound"])
    nets = CaActorNets.from_params(info, {"f_F": params["actor.f_F"], "f_B": params["actor.f_B"]})
    return CaActor(nets)


def critic_from_description(info: dict, params: dict[str, ParamSet], name: str, action_bound: float):
    if info["type"] == "plain":
        return PlainCritic(Mlp(MlpSpec(**info["mlp"]), params=params[f"{name}.mlp"]), action_bound, name)
    nets = CaCriticNets.from_params(info, {"g_F": params[f"{name}.g_F"], "g_B": params[f"{name}.g_B"]})
    return CaCritic(nets, action_bound, name)


class ZeroActor:
    """Adjustment-free policy: the command is exactly the car-following prior."""

    action_bound = 0.0

    def forward(self, obs):
        obs, single = _as_batch(obs)
        z = np.zeros(obs.shape[:2])
        return (z[0] if single else z), None
