"""Forward/backward message passing along the platoon with weights shared by every vehicle.

Each vehicle runs two networks per tick. The forward-transmission net maps
its own input and the message from the vehicle behind to a message ``F_i``
sent to the vehicle in front. The backward-transmission net maps ``F_i``
and the message from the vehicle in front to a head output (action or Q)
plus a message ``B_i`` sent to the vehicle behind. The messages entering
the tail's forward net and the head's backward net are zero vectors.

Inputs are arrays shaped ``(batch, N, k)`` (or ``(N, k)`` for one platoon),
front to back.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import UsageError
from .nn import Mlp, MlpSpec, ParamSet, Tape

ACTION_INIT_SCALE = 1e-3


def _feature_dim(d_msg: int, no_comm_features: int) -> int:
    # with messages switched off each vehicle still keeps a private feature vector
    return d_msg if d_msg > 0 else no_comm_features


class _TransmissionPair:
    """Shared forward/backward transmission networks plus head semantics."""

    kind = ""

    def __init__(self, f_fwd: Mlp, f_bwd: Mlp, in_dim: int, d_msg: int, d_feat: int,
                 head_bound: Optional[float]):
        self.f_fwd = f_fwd
        self.f_bwd = f_bwd
        self.in_dim = in_dim
        self.d_msg = d_msg
        self.d_feat = d_feat
        self.head_bound = head_bound

    def params(self) -> dict[str, ParamSet]:
        names = self.net_names
        return {names[0]: self.f_fwd.params, names[1]: self.f_bwd.params}

    def describe(self) -> dict:
        return {"in_dim": self.in_dim, "d_msg": self.d_msg, "d_feat": self.d_feat,
                "head_bound": self.head_bound, "fwd": self.f_fwd.spec.to_dict(),
                "bwd": self.f_bwd.spec.to_dict()}

    @classmethod
    def _build(cls, in_dim, d_msg, d_feat, fwd_hidden, bwd_hidden, head_bound, rng, small_head):
        if d_msg < 0:
            raise UsageError("d_msg must be >= 0")
        f_fwd = Mlp(MlpSpec(in_dim + d_msg, tuple(fwd_hidden), d_feat), rng=rng)
        f_bwd = Mlp(MlpSpec(d_feat + d_msg, tuple(bwd_hidden), 1 + d_msg), rng=rng)
        if small_head:
            last = f_bwd.n_layers - 1
            f_bwd.params[f"W{last}"][:, 0] = rng.uniform(-ACTION_INIT_SCALE, ACTION_INIT_SCALE,
                                                         f_bwd.params[f"W{last}"].shape[0])
            f_bwd.params[f"b{last}"][0] = 0.0
            f_bwd.params.mark_changed()
        return cls(f_fwd, f_bwd, in_dim, d_msg, d_feat, head_bound)

    @classmethod
    def from_params(cls, info: dict, params: dict[str, ParamSet]):
        names = cls.net_names
        f_fwd = Mlp(MlpSpec(**info["fwd"]), params=params[names[0]])
        f_bwd = Mlp(MlpSpec(**info["bwd"]), params=params[names[1]])
        return cls(f_fwd, f_bwd, info["in_dim"], info["d_msg"], info["d_feat"], info["head_bound"])


class CaActorNets(_TransmissionPair):
    """Actor side: input is the observation, head is the bounded acceleration adjustment."""

    net_names = ("f_F", "f_B")

    @classmethod
    def create(cls, obs_dim: int = 4, d_msg: int = 8, fwd_hidden=(32, 32), bwd_hidden=(32, 32),
               action_bound: float = 2.0, rng: Optional[np.random.Generator] = None,
               no_comm_features: int = 8) -> "CaActorNets":
        rng = rng if rng is not None else np.random.default_rng(0)
        return cls._build(obs_dim, d_msg, _feature_dim(d_msg, no_comm_features), fwd_hidden,
                          bwd_hidden, action_bound, rng, small_head=True)


class CaCriticNets(_TransmissionPair):
    """Critic side: input is observation plus action, head is the Q-value."""

    net_names = ("g_F", "g_B")

    @classmethod
    def create(cls, obs_dim: int = 4, d_msg: int = 8, fwd_hidden=(32, 32), bwd_hidden=(32, 32),
               rng: Optional[np.random.Generator] = None, no_comm_features: int = 8) -> "CaCriticNets":
        rng = rng if rng is not None else np.random.default_rng(0)
        return cls._build(obs_dim + 1, d_msg, _feature_dim(d_msg, no_comm_features), fwd_hidden,
                          bwd_hidden, None, rng, small_head=False)


@dataclass
class SweepResult:
    """Per-follower head outputs, all messages, and the tapes needed to backpropagate."""

    outputs: np.ndarray
    forward_messages: np.ndarray
    backward_messages: np.ndarray
    fwd_tapes: list
    bwd_tapes: list
    squashed: Optional[np.ndarray]
    nets: _TransmissionPair
    single: bool

    def __len__(self) -> int:
        return self.outputs.shape[-1]


def _sweep(X: np.ndarray, nets: _TransmissionPair) -> SweepResult:
    X = np.asarray(X, dtype=float)
    single = X.ndim == 2
    if single:
        X = X[None]
    if X.ndim != 3 or X.shape[2] != nets.in_dim:
        raise UsageError(f"sweep input shape {X.shape} does not match per-vehicle width {nets.in_dim}")
    batch, n, _ = X.shape
    if n < 1:
        raise UsageError("a sweep needs at least one follower")
    d, df = nets.d_msg, nets.d_feat
    feats = np.empty((batch, n, df))
    fwd_tapes: list[Tape] = [None] * n
    incoming = np.zeros((batch, d))
    for i in range(n - 1, -1, -1):
        out, tape = nets.f_fwd.forward(np.concatenate([X[:, i], incoming], axis=1))
        feats[:, i] = out
        fwd_tapes[i] = tape
        incoming = out if d > 0 else incoming
    bmsgs = np.empty((batch, n, d))
    raw = np.empty((batch, n))
    bwd_tapes: list[Tape] = [None] * n
    incoming = np.zeros((batch, d))
    for i in range(n):
        out, tape = nets.f_bwd.forward(np.concatenate([feats[:, i], incoming], axis=1))
        raw[:, i] = out[:, 0]
        bmsgs[:, i] = out[:, 1:]
        bwd_tapes[i] = tape
        incoming = out[:, 1:]
    squashed = None
    outputs = raw
    if nets.head_bound is not None:
        squashed = np.tanh(raw)
        outputs = nets.head_bound * squashed
    if single:
        return SweepResult(outputs[0], feats[0], bmsgs[0], fwd_tapes, bwd_tapes,
                           None if squashed is None else squashed[0], nets, True)
    return SweepResult(outputs, feats, bmsgs, fwd_tapes, bwd_tapes, squashed, nets, False)


def actor_sweep(observations, nets: CaActorNets) -> SweepResult:
    """Actions of every follower from one synchronous forward-then-backward message sweep."""
    return _sweep(observations, nets)


def critic_sweep(observations, actions, nets: CaCriticNets) -> SweepResult:
    """Q-value of every follower; each vehicle's forward input is its observation and action."""
    obs = np.asarray(observations, dtype=float)
    act = np.asarray(actions, dtype=float)
    if act.shape != obs.shape[:-1]:
        raise UsageError(f"actions shape {act.shape} does not align with observations {obs.shape}")
    return _sweep(np.concatenate([obs, act[..., None]], axis=-1), nets)


def sweep_backward(result: SweepResult, output_grads) -> np.ndarray:
    """Backpropagate per-follower head gradients through both message chains.

    Gradients are accumulated into the shared networks (summed over
    positions). Returns the gradient with respect to the sweep inputs, shaped
    like them: ``(batch, N, in_dim)``, with the critic's action column last.
    """
    nets = result.nets
    g_head = np.asarray(output_grads, dtype=float)
    if result.single:
        g_head = g_head[None]
    batch, n = g_head.shape
    if n != len(result.bwd_tapes):
        raise UsageError(f"expected gradients for {len(result.bwd_tapes)} followers, got {n}")
    d, df = nets.d_msg, nets.d_feat
    if result.squashed is not None:
        sq = result.squashed[None] if result.single else result.squashed
        g_head = g_head * (nets.head_bound * (1.0 - sq ** 2))
    g_feat = np.zeros((batch, n, df))
    g_bmsg = np.zeros((batch, d))
    for i in range(n - 1, -1, -1):
        g_in = nets.f_bwd.backward(result.bwd_tapes[i], np.concatenate([g_head[:, i:i + 1], g_bmsg], axis=1))
        g_feat[:, i] += g_in[:, :df]
        g_bmsg = g_in[:, df:]
    k = nets.in_dim
    g_x = np.empty((batch, n, k))
    for i in range(n):
        g_in = nets.f_fwd.backward(result.fwd_tapes[i], g_feat[:, i])
        g_x[:, i] = g_in[:, :k]
        if d > 0 and i + 1 < n:
            g_feat[:, i + 1] += g_in[:, k:]
    return g_x[0] if result.single else g_x


def zero_messages(n: int, d_msg: int) -> tuple[np.ndarray, np.ndarray]:
    return np.zeros((n, d_msg)), np.zeros((n, d_msg))


def delayed_mode_step(inputs, nets: _TransmissionPair,
                      prev_messages: tuple[np.ndarray, np.ndarray]) -> tuple[np.ndarray, tuple[np.ndarray, np.ndarray]]:
    """One tick of message passing where neighbours' messages are a tick old.

    ``prev_messages`` is ``(F, B)`` from the previous tick, each ``(N, d_msg)``
    (zeros at the first tick). Returns head outputs and the new ``(F, B)``.
    """
    X = np.asarray(inputs, dtype=float)
    if X.ndim != 2 or X.shape[1] != nets.in_dim:
        raise UsageError(f"delayed step expects (N, {nets.in_dim}) inputs, got {X.shape}")
    n = X.shape[0]
    d = nets.d_msg
    f_prev, b_prev = (np.asarray(m, dtype=float) for m in prev_messages)
    if f_prev.shape != (n, d) or b_prev.shape != (n, d):
        raise UsageError(f"previous messages must be ({n}, {d})")
    from_behind = np.zeros((n, d))
    from_behind[:-1] = f_prev[1:]
    from_front = np.zeros((n, d))
    from_front[1:] = b_prev[:-1]
    feats = nets.f_fwd(np.concatenate([X, from_behind], axis=1))
    out = nets.f_bwd(np.concatenate([feats, from_front], axis=1))
    head = out[:, 0]
    if nets.head_bound is not None:
        head = nets.head_bound * np.tanh(head)
    f_new = feats if d > 0 else np.zeros((n, 0))
    return head, (f_new, out[:, 1:])
