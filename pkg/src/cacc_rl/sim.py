"""Longitudinal platoon simulation: state, kinematics, observations, scenarios, episodes.

Vehicle index 0 is the replayed leader; indices ``1..N`` are the controlled
followers, ordered front to back.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from .cf_models import IdmParams, idm_equilibrium_gap
from .errors import DomainError, NumericError, UsageError
from .rewards import (
    RewardContext,
    RewardParams,
    RewardWeights,
    total_reward,
    ttc_from_gap,
)

SPEED_MODES = ("match-leader", "zero", "explicit")
SCENARIO_KINDS = ("constant", "sinusoid", "stop-and-go", "replay")
EPISODE_CSV_HEADER = ("t", "vehicle", "x", "v", "a", "reward", "gap", "ttc", "jerk")


@dataclass(frozen=True)
class VehicleState:
    x: float
    v: float
    a: float
    length: float = 5.0


class Observation(NamedTuple):
    """Local observation of one follower: speed, acceleration, gap, ``v_pred - v``."""

    v: float
    a: float
    d: float
    dv: float


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.1
    n_followers: int = 3
    initial_spacing: Optional[float] = None
    initial_speed_mode: str = "match-leader"
    initial_speed: float = 0.0
    a_floor: float = -5.0
    a_ceil: float = 3.0
    collision_penalty: float = -100.0
    follower_length: float = 5.0

    def __post_init__(self):
        if not self.dt > 0:
            raise UsageError("dt must be positive")
        if self.n_followers < 1:
            raise UsageError("n_followers must be >= 1")
        if not self.a_floor < 0 < self.a_ceil:
            raise UsageError("need a_floor < 0 < a_ceil")
        if self.initial_speed_mode not in SPEED_MODES:
            raise UsageError(f"initial_speed_mode must be one of {SPEED_MODES}")
        if not self.follower_length > 0:
            raise UsageError("follower_length must be positive")


@dataclass(frozen=True)
class PlatoonState:
    """Whole-platoon state at one tick, stored column-wise (index 0 = leader)."""

    tick: int
    dt: float
    x: np.ndarray
    v: np.ndarray
    a: np.ndarray
    length: np.ndarray

    @property
    def t(self) -> float:
        return self.tick * self.dt

    @property
    def n_followers(self) -> int:
        return len(self.x) - 1

    def vehicle(self, i: int) -> VehicleState:
        return VehicleState(float(self.x[i]), float(self.v[i]), float(self.a[i]), float(self.length[i]))

    @property
    def leader(self) -> VehicleState:
        return self.vehicle(0)

    @property
    def followers(self) -> list[VehicleState]:
        return [self.vehicle(i) for i in range(1, len(self.x))]

    def gaps(self) -> np.ndarray:
        """Bumper-to-bumper gap of every follower to its predecessor."""
        return self.x[:-1] - self.length[:-1] - self.x[1:]


@dataclass(frozen=True)
class LeaderTrajectory:
    """Leader samples ``(x, v, a)`` at a fixed interval, with ``x[k+1] = x[k] + v[k+1]*dt``."""

    dt: float
    samples: np.ndarray
    source_id: str = "synthetic"

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim != 2 or samples.shape[1] != 3:
            raise UsageError("trajectory samples must have shape (K, 3)")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def x(self) -> np.ndarray:
        return self.samples[:, 0]

    @property
    def v(self) -> np.ndarray:
        return self.samples[:, 1]

    @property
    def a(self) -> np.ndarray:
        return self.samples[:, 2]

    @property
    def duration(self) -> float:
        return len(self) * self.dt

    def consistency_error(self) -> float:
        if len(self) < 2:
            return 0.0
        return float(np.max(np.abs(self.x[1:] - (self.x[:-1] + self.v[1:] * self.dt))))


@dataclass
class StepOutcome:
    next: PlatoonState
    observations: np.ndarray
    rewards: np.ndarray
    done: bool
    collision: bool = False
    collision_index: Optional[int] = None
    gaps: np.ndarray = field(default=None, repr=False)
    ttc: np.ndarray = field(default=None, repr=False)
    jerk: np.ndarray = field(default=None, repr=False)


def observe(platoon: PlatoonState, i: int) -> Observation:
    """Observation of follower ``i`` (1-based)."""
    if not 1 <= i <= platoon.n_followers:
        raise UsageError(f"follower index {i} out of range 1..{platoon.n_followers}")
    d = platoon.x[i - 1] - platoon.length[i - 1] - platoon.x[i]
    return Observation(float(platoon.v[i]), float(platoon.a[i]), float(d),
                       float(platoon.v[i - 1] - platoon.v[i]))


def observe_all(platoon: PlatoonState) -> np.ndarray:
    """``(N, 4)`` array of every follower's observation, front to back."""
    return np.column_stack([platoon.v[1:], platoon.a[1:], platoon.gaps(), platoon.v[:-1] - platoon.v[1:]])


def initial_platoon(config: SimConfig, trajectory: LeaderTrajectory,
                    idm: IdmParams = IdmParams()) -> PlatoonState:
    """Followers placed behind the first leader sample.

    Unless overridden, followers start at the leader's speed and at the IDM
    equilibrium gap for that speed.
    """
    lx, lv, la = trajectory.samples[0]
    if config.initial_speed_mode == "match-leader":
        v0 = float(lv)
    elif config.initial_speed_mode == "zero":
        v0 = 0.0
    else:
        v0 = float(config.initial_speed)
    if v0 < 0:
        raise UsageError("initial speed must be non-negative")
    gap = config.initial_spacing if config.initial_spacing is not None else idm_equilibrium_gap(idm, v0)
    n = config.n_followers
    length = np.full(n + 1, config.follower_length)
    x = np.empty(n + 1)
    x[0] = lx
    for i in range(1, n + 1):
        x[i] = x[i - 1] - length[i - 1] - gap
    v = np.full(n + 1, v0)
    v[0] = lv
    a = np.zeros(n + 1)
    a[0] = la
    return PlatoonState(0, trajectory.dt, x, v, a, length)


def _score(x, v, a, a_prev, length, dt, config, weights, params):
    """Rewards, gaps, TTCs and jerks of every follower for one state."""
    n = len(x) - 1
    gaps = x[:-1] - length[:-1] - x[1:]
    jerks = (a[1:] - a_prev[1:]) / dt
    rewards = np.empty(n)
    ttcs = np.full(n, np.nan)
    for j in range(n):
        if gaps[j] <= 0:
            rewards[j] = config.collision_penalty
            continue
        ctx = RewardContext(x[j], length[j], x[j + 1], v[j + 1], v[j], a[j + 1], a_prev[j + 1], dt)
        rewards[j] = total_reward(ctx, weights, params)
        tc = ttc_from_gap(gaps[j], v[j + 1], v[j])
        if tc is not None:
            ttcs[j] = tc
    return rewards, gaps, ttcs, jerks


def step(platoon: PlatoonState, accels, leader_next, config: SimConfig,
         weights: RewardWeights = RewardWeights(), params: RewardParams = RewardParams(),
         final: bool = False) -> StepOutcome:
    """Advance the platoon one tick.

    Follower accelerations are clamped to ``[a_floor, a_ceil]``, speeds to
    ``>= 0``; positions use the updated speed. ``final`` marks the last
    available leader sample, which ends the episode.
    """
    n = platoon.n_followers
    accels = np.asarray(accels, dtype=float)
    if accels.shape != (n,):
        raise UsageError(f"expected {n} accelerations, got shape {accels.shape}")
    if not np.all(np.isfinite(accels)):
        raise NumericError(f"non-finite acceleration command: {accels}")
    dt = platoon.dt
    a_new = np.empty(n + 1)
    v_new = np.empty(n + 1)
    x_new = np.empty(n + 1)
    a_new[1:] = np.clip(accels, config.a_floor, config.a_ceil)
    v_new[1:] = np.maximum(0.0, platoon.v[1:] + a_new[1:] * dt)
    x_new[1:] = platoon.x[1:] + v_new[1:] * dt
    x_new[0], v_new[0], a_new[0] = leader_next
    nxt = PlatoonState(platoon.tick + 1, dt, x_new, v_new, a_new, platoon.length)
    rewards, gaps, ttcs, jerks = _score(x_new, v_new, a_new, platoon.a, platoon.length, dt,
                                        config, weights, params)
    hit = np.flatnonzero(gaps <= 0)
    collision = hit.size > 0
    return StepOutcome(
        next=nxt,
        observations=observe_all(nxt),
        rewards=rewards,
        done=bool(final or collision),
        collision=collision,
        collision_index=int(hit[0]) + 1 if collision else None,
        gaps=gaps,
        ttc=ttcs,
        jerk=np.concatenate([[(a_new[0] - platoon.a[0]) / dt], jerks]),
    )


# -- scenarios -----------------------------------------------------------------

def _stop_and_go_profile(v_c, decel, accel, hold, cruise):
    t_dec = v_c / decel
    t_acc = v_c / accel
    cycle = cruise + t_dec + hold + t_acc

    def speed(t):
        if t < 0:
            return v_c
        tau = math.fmod(t, cycle)
        if tau < cruise:
            return v_c
        tau -= cruise
        if tau < t_dec:
            return v_c - decel * tau
        tau -= t_dec
        if tau < hold:
            return 0.0
        tau -= hold
        return min(v_c, accel * tau)

    return speed


def trajectory_from_speeds(speeds: Sequence[float], dt: float, x0: float = 0.0,
                           v_before: Optional[float] = None, source_id: str = "synthetic") -> LeaderTrajectory:
    """Build a consistent trajectory from sampled speeds.

    Accelerations are backward differences (``v[k] = v[k-1] + a[k]*dt``);
    ``v_before`` is the speed one tick before the first sample.
    """
    v = np.asarray(speeds, dtype=float)
    prev = np.empty_like(v)
    prev[0] = v[0] if v_before is None else v_before
    prev[1:] = v[:-1]
    a = (v - prev) / dt
    x = np.empty_like(v)
    x[0] = x0
    for k in range(1, len(v)):
        x[k] = x[k - 1] + v[k] * dt
    return LeaderTrajectory(dt, np.column_stack([x, v, a]), source_id)


def make_scenario(kind: str, *, duration: float = 60.0, dt: float = 0.1, v_c: float = 15.0,
                  amplitude: float = 3.0, period: float = 60.0, decel: float = 2.0,
                  accel: float = 1.0, hold: float = 5.0, cruise: float = 20.0, x0: float = 0.0,
                  source: Optional[LeaderTrajectory] = None) -> LeaderTrajectory:
    """Synthetic leader trajectory of ``round(duration / dt)`` samples.

    ``stop-and-go`` repeats: cruise at ``v_c`` for ``cruise`` s, brake at
    ``decel`` to a stop, stand for ``hold`` s, speed up at ``accel``.
    ``sinusoid`` uses ``v_c + amplitude * sin(2*pi*t/period)``. ``replay``
    truncates ``source`` to ``duration``.
    """
    if kind not in SCENARIO_KINDS:
        raise UsageError(f"unknown scenario kind {kind!r}; expected one of {SCENARIO_KINDS}")
    if not duration > 0 or not dt > 0:
        raise UsageError("duration and dt must be positive")
    n = int(round(duration / dt))
    if kind == "replay":
        if source is None:
            raise UsageError("replay scenario needs a source trajectory")
        if abs(source.dt - dt) > 1e-12:
            raise UsageError(f"source dt {source.dt} differs from simulation dt {dt}")
        return LeaderTrajectory(dt, source.samples[:n].copy(), source.source_id)
    if v_c < 0:
        raise UsageError("cruise speed must be non-negative")
    if kind == "constant":
        speed = lambda t: v_c  # noqa: E731
        tag = f"constant(v_c={v_c})"
    elif kind == "sinusoid":
        if not period > 0:
            raise UsageError("period must be positive")
        if amplitude >= v_c:
            raise UsageError(f"amplitude {amplitude} must be below cruise speed {v_c}")
        speed = lambda t: v_c + amplitude * math.sin(2.0 * math.pi * t / period)  # noqa: E731
        tag = f"sinusoid(v_c={v_c},A={amplitude},P={period})"
    else:
        if not decel > 0 or not accel > 0 or hold < 0 or cruise < 0:
            raise UsageError("stop-and-go needs decel > 0, accel > 0, hold >= 0, cruise >= 0")
        speed = _stop_and_go_profile(v_c, decel, accel, hold, cruise)
        tag = f"stop-and-go(v_c={v_c},decel={decel},accel={accel},hold={hold},cruise={cruise})"
    speeds = [speed(k * dt) for k in range(n)]
    return trajectory_from_speeds(speeds, dt, x0, v_before=speed(-dt), source_id=tag)


# -- episodes ------------------------------------------------------------------

Controller = Callable[[PlatoonState, np.ndarray], np.ndarray]


@dataclass
class EpisodeLog:
    """Per-tick record of a whole episode; row ``k`` is the state after ``k`` steps.

    ``reward``, ``gap`` and ``ttc`` cover followers only (``ttc`` is NaN when
    undefined). Row 0 holds the initial state, scored with zero jerk.
    """

    dt: float
    t: np.ndarray
    x: np.ndarray
    v: np.ndarray
    a: np.ndarray
    jerk: np.ndarray
    reward: np.ndarray
    gap: np.ndarray
    ttc: np.ndarray
    length: np.ndarray
    collision: bool = False
    collision_index: Optional[int] = None
    source_id: str = ""

    def __len__(self) -> int:
        return len(self.t)

    @property
    def n_followers(self) -> int:
        return self.x.shape[1] - 1

    def returns(self) -> np.ndarray:
        """Per-follower sum of rewards earned by transitions (rows ``1..``)."""
        return self.reward[1:].sum(axis=0)

    def mean_return(self) -> float:
        return float(self.returns().mean()) if len(self) > 1 else 0.0

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(EPISODE_CSV_HEADER)
            for k in range(len(self.t)):
                for i in range(self.n_followers + 1):
                    if i == 0:
                        rest = ("", "", "")
                    else:
                        tc = self.ttc[k, i - 1]
                        rest = (repr(float(self.reward[k, i - 1])), repr(float(self.gap[k, i - 1])),
                                "" if math.isnan(tc) else repr(float(tc)))
                    w.writerow((repr(float(self.t[k])), i, repr(float(self.x[k, i])),
                                repr(float(self.v[k, i])), repr(float(self.a[k, i])), *rest,
                                repr(float(self.jerk[k, i]))))

    @classmethod
    def read_csv(cls, path, dt: Optional[float] = None, length: float = 5.0) -> "EpisodeLog":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise UsageError(f"{path}: empty episode log")
        n_veh = max(int(r["vehicle"]) for r in rows) + 1
        n_ticks = len(rows) // n_veh
        cols = {c: np.full((n_ticks, n_veh), np.nan) for c in ("x", "v", "a", "jerk", "reward", "gap", "ttc")}
        t = np.empty(n_ticks)
        for idx, r in enumerate(rows):
            k, i = divmod(idx, n_veh)
            t[k] = float(r["t"])
            for c in cols:
                if r[c] != "":
                    cols[c][k, i] = float(r[c])
        if dt is None:
            dt = float(t[1] - t[0]) if n_ticks > 1 else float("nan")
        return cls(dt=dt, t=t, x=cols["x"], v=cols["v"], a=cols["a"], jerk=cols["jerk"],
                   reward=cols["reward"][:, 1:], gap=cols["gap"][:, 1:], ttc=cols["ttc"][:, 1:],
                   length=np.full(n_veh, length))


class PlatoonEnv:
    """Stateful wrapper around :func:`step` for one leader trajectory at a time."""

    def __init__(self, config: SimConfig = SimConfig(), weights: RewardWeights = RewardWeights(),
                 params: RewardParams = RewardParams(), idm: IdmParams = IdmParams()):
        self.config = config
        self.weights = weights
        self.params = params
        self.idm = idm
        self.trajectory: Optional[LeaderTrajectory] = None
        self.state: Optional[PlatoonState] = None

    def reset(self, trajectory: LeaderTrajectory) -> np.ndarray:
        if len(trajectory) < 2:
            raise UsageError("trajectory must have at least 2 samples")
        if abs(trajectory.dt - self.config.dt) > 1e-12:
            raise UsageError(f"trajectory dt {trajectory.dt} differs from config dt {self.config.dt}")
        self.trajectory = trajectory
        self.state = initial_platoon(self.config, trajectory, self.idm)
        return observe_all(self.state)

    def initial_scores(self):
        s = self.state
        return _score(s.x, s.v, s.a, s.a, s.length, s.dt, self.config, self.weights, self.params)

    def step(self, accels) -> StepOutcome:
        k = self.state.tick + 1
        if k >= len(self.trajectory):
            raise UsageError("episode already exhausted the leader trajectory")
        out = step(self.state, accels, self.trajectory.samples[k], self.config, self.weights,
                   self.params, final=k == len(self.trajectory) - 1)
        self.state = out.next
        return out


def run_episode(config: SimConfig, trajectory: LeaderTrajectory, controller: Controller,
                weights: RewardWeights = RewardWeights(), params: RewardParams = RewardParams(),
                idm: IdmParams = IdmParams()) -> EpisodeLog:
    """Roll ``controller`` out until collision or the end of ``trajectory``.

    ``controller(platoon, observations)`` returns the commanded acceleration
    of every follower; an optional ``reset(platoon)`` is called first.
    """
    env = PlatoonEnv(config, weights, params, idm)
    obs = env.reset(trajectory)
    s = env.state
    reset = getattr(controller, "reset", None)
    if reset is not None:
        reset(s)
    rewards, gaps, ttcs, jerks = env.initial_scores()
    rows_x, rows_v, rows_a = [s.x], [s.v], [s.a]
    rows_j = [np.zeros(s.n_followers + 1)]
    rows_r, rows_g, rows_t = [rewards], [gaps], [ttcs]
    hit = np.flatnonzero(gaps <= 0)
    collision = hit.size > 0
    collision_index = int(hit[0]) + 1 if collision else None
    while not collision and env.state.tick < len(trajectory) - 1:
        accels = np.asarray(controller(env.state, obs), dtype=float)
        if accels.shape != (s.n_followers,):
            raise UsageError(f"controller returned shape {accels.shape}, expected ({s.n_followers},)")
        out = env.step(accels)
        n = out.next
        rows_x.append(n.x); rows_v.append(n.v); rows_a.append(n.a); rows_j.append(out.jerk)
        rows_r.append(out.rewards); rows_g.append(out.gaps); rows_t.append(out.ttc)
        obs = out.observations
        collision, collision_index = out.collision, out.collision_index
        if out.done:
            break
    k = len(rows_x)
    return EpisodeLog(
        dt=config.dt,
        t=np.arange(k) * config.dt,
        x=np.array(rows_x), v=np.array(rows_v), a=np.array(rows_a), jerk=np.array(rows_j),
        reward=np.array(rows_r), gap=np.array(rows_g), ttc=np.array(rows_t),
        length=s.length.copy(), collision=collision, collision_index=collision_index,
        source_id=trajectory.source_id,
    )
