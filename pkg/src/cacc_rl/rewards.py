"""Per-follower reward: log-normal headway term, TTC safety term and jerk comfort term."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

from .errors import DomainError, UsageError

SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class RewardWeights:
    w_g: float = 1.0
    w_s: float = 1.0
    w_c: float = 1.0

    def __post_init__(self):
        if not all(math.isfinite(w) for w in (self.w_g, self.w_s, self.w_c)):
            raise UsageError("reward weights must be finite")


@dataclass(frozen=True)
class RewardParams:
    """Shape constants of the reward terms.

    The defaults put the mode of the headway density, ``exp(mu - sigma**2)``,
    at 1.5 s.
    """

    sigma: float = 0.5
    mu: float = math.log(1.5) + 0.25
    ttc_threshold: float = 4.0
    a_max: float = 3.0
    a_min: float = -2.0
    h_cap: float = 100.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise UsageError("sigma must be positive")
        if not self.ttc_threshold > 0:
            raise UsageError("ttc_threshold must be positive")
        if not self.a_max > 0 > self.a_min:
            raise UsageError("need a_max > 0 > a_min")
        if not self.h_cap > 0:
            raise UsageError("h_cap must be positive")


def _gap(x_pred: float, l_pred: float, x: float) -> float:
    gap = x_pred - l_pred - x
    if not gap > 0:
        raise DomainError(f"bumper-to-bumper gap must be positive, got {gap}")
    return gap


def headway_from_gap(gap: float, v: float, h_cap: float = 100.0) -> float:
    if not gap > 0:
        raise DomainError(f"bumper-to-bumper gap must be positive, got {gap}")
    if v <= 0:
        return h_cap
    return gap / v


def headway(x_pred: float, l_pred: float, x: float, v: float, h_cap: float = 100.0) -> float:
    """Time headway in seconds; a stopped ego vehicle reports ``h_cap``."""
    return headway_from_gap(_gap(x_pred, l_pred, x), v, h_cap)


def ttc_from_gap(gap: float, v: float, v_pred: float) -> Optional[float]:
    if not gap > 0:
        raise DomainError(f"bumper-to-bumper gap must be positive, got {gap}")
    if v > v_pred:
        return gap / (v - v_pred)
    return None


def ttc(x_pred: float, l_pred: float, x: float, v: float, v_pred: float) -> Optional[float]:
    """Time-to-collision, or ``None`` when the ego vehicle is not closing in."""
    return ttc_from_gap(_gap(x_pred, l_pred, x), v, v_pred)


def jerk(a_now: float, a_prev: float, dt: float) -> float:
    if not dt > 0:
        raise UsageError("dt must be positive")
    return (a_now - a_prev) / dt


def gap_reward(h: float, p: RewardParams = RewardParams()) -> float:
    if not h > 0:
        raise DomainError(f"headway must be positive, got {h}")
    z = math.log(h) - p.mu
    return math.exp(-z * z / (2.0 * p.sigma ** 2)) / (h * p.sigma * SQRT_2PI)


def safety_reward(ttc_value: Optional[float], p: RewardParams = RewardParams()) -> float:
    if ttc_value is not None and 0 < ttc_value <= p.ttc_threshold:
        return math.log(ttc_value / p.ttc_threshold)
    return 0.0


def comfort_reward(j: float, p: RewardParams = RewardParams()) -> float:
    return -(j / (p.a_max - p.a_min)) ** 2


class RewardContext(NamedTuple):
    """Raw kinematic quantities needed to score one follower at one tick."""

    x_pred: float
    l_pred: float
    x: float
    v: float
    v_pred: float
    a: float
    a_prev: float
    dt: float


def reward_components(ctx: RewardContext, p: RewardParams = RewardParams()) -> tuple[float, float, float]:
    gap = _gap(ctx.x_pred, ctx.l_pred, ctx.x)
    r_g = gap_reward(headway_from_gap(gap, ctx.v, p.h_cap), p)
    r_s = safety_reward(ttc_from_gap(gap, ctx.v, ctx.v_pred), p)
    r_c = comfort_reward(jerk(ctx.a, ctx.a_prev, ctx.dt), p)
    return r_g, r_s, r_c


def total_reward(ctx: RewardContext, weights: RewardWeights = RewardWeights(),
                 p: RewardParams = RewardParams()) -> float:
    r_g, r_s, r_c = reward_components(ctx, p)
    return weights.w_g * r_g + weights.w_s * r_s + weights.w_c * r_c
