"""Baseline car-following laws (IDM and Krauss) behind a common controller interface."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, NumericError, UsageError


@dataclass(frozen=True)
class IdmParams:
    """Intelligent Driver Model parameters.

    Defaults follow the NGSIM calibration: 3 m/s^2, 2 m/s^2, 120 km/h, 2 m, 1.5 s, 4.
    """

    a_max: float = 3.0
    b: float = 2.0
    v0: float = 120.0 / 3.6
    s0: float = 2.0
    T: float = 1.5
    delta: float = 4.0

    def __post_init__(self):
        for name in ("a_max", "b", "v0", "s0", "T", "delta"):
            if not getattr(self, name) > 0:
                raise UsageError(f"IdmParams.{name} must be positive")
        if self.delta < 1:
            raise UsageError("IdmParams.delta must be >= 1")


@dataclass(frozen=True)
class KraussParams:
    t_r: float = 1.0
    b: float = 2.0
    v0: float = 120.0 / 3.6
    a_max: float = 3.0

    def __post_init__(self):
        if not self.t_r > 0 or not self.b > 0:
            raise UsageError("KraussParams.t_r and b must be positive")


def idm_desired_gap(p: IdmParams, v: float, dv_closing: float) -> float:
    s_star = p.s0 + v * p.T + v * dv_closing / (2.0 * math.sqrt(p.a_max * p.b))
    # floored at s0 so a fast-opening gap never yields a negative desired gap
    return max(s_star, p.s0)


def idm_accel(p: IdmParams, v: float, dv_closing: float, s: float) -> float:
    """IDM acceleration.

    ``dv_closing`` is the approach rate ``v_ego - v_pred``; positive when
    the ego vehicle is catching up.
    """
    if not all(math.isfinite(z) for z in (v, dv_closing, s)):
        raise NumericError("non-finite input to idm_accel")
    if not s > 0:
        raise DomainError(f"IDM gap must be positive, got {s}")
    s_star = idm_desired_gap(p, v, dv_closing)
    return p.a_max * (1.0 - (v / p.v0) ** p.delta - (s_star / s) ** 2)


def idm_equilibrium_gap(p: IdmParams, v: float) -> float:
    """Gap at which a vehicle cruising at ``v`` behind an equal-speed leader has zero IDM acceleration."""
    if not 0 <= v < p.v0:
        raise DomainError(f"equilibrium gap undefined for v={v} (v0={p.v0})")
    return (p.s0 + v * p.T) / math.sqrt(1.0 - (v / p.v0) ** p.delta)


def krauss_safe_speed(p: KraussParams, v: float, v_pred: float, g: float) -> float:
    return v_pred + (g - v_pred * p.t_r) / ((v_pred + v) / (2.0 * p.b) + p.t_r)


def krauss_accel(p: KraussParams, v: float, v_pred: float, g: float, dt: float) -> float:
    """Krauss update expressed as an acceleration over one tick."""
    if not all(math.isfinite(z) for z in (v, v_pred, g, dt)):
        raise NumericError("non-finite input to krauss_accel")
    if not g > 0:
        raise DomainError(f"Krauss gap must be positive, got {g}")
    if not dt > 0:
        raise UsageError("dt must be positive")
    v_safe = krauss_safe_speed(p, v, v_pred, g)
    v_des = min(v_safe, v + p.a_max * dt, p.v0)
    return min(max((v_des - v) / dt, -p.b), p.a_max)


MODELS = ("idm", "krauss")


def base_accel(model: str, obs, dt: float, idm: IdmParams | None = None,
               krauss: KraussParams | None = None) -> float:
    """Acceleration of the chosen car-following model for one observation.

    ``obs`` is an :class:`~cacc_rl.sim.Observation` (or any ``(v, a, d, dv)``
    sequence) whose ``dv`` is ``v_pred - v_ego``.
    """
    v, _, d, dv = (float(z) for z in obs)
    if model == "idm":
        if not d > 0:
            raise DomainError(f"observation gap must be positive, got {d}")
        return idm_accel(idm or IdmParams(), v, -dv, d)
    if model == "krauss":
        if not d > 0:
            raise DomainError(f"observation gap must be positive, got {d}")
        return krauss_accel(krauss or KraussParams(), v, v + dv, d, dt)
    raise UsageError(f"unknown car-following model {model!r}; expected one of {MODELS}")


def base_accels(model: str, observations: np.ndarray, dt: float, idm: IdmParams | None = None,
                krauss: KraussParams | None = None) -> np.ndarray:
    """Vector form of :func:`base_accel` over an ``(N, 4)`` observation array."""
    return np.array([base_accel(model, o, dt, idm, krauss) for o in observations], dtype=float)


class CarFollowingController:
    """Drives every follower with a fixed car-following law."""

    def __init__(self, model: str = "idm", idm: IdmParams | None = None,
                 krauss: KraussParams | None = None, dt: float = 0.1):
        if model not in MODELS:
            raise UsageError(f"unknown car-following model {model!r}")
        self.model = model
        self.name = model.upper() if model == "idm" else model.capitalize()
        self.idm = idm or IdmParams()
        self.krauss = krauss or KraussParams()
        self.dt = dt

    def reset(self, platoon=None):
        pass

    def __call__(self, platoon, observations: np.ndarray) -> np.ndarray:
        return base_accels(self.model, observations, self.dt, self.idm, self.krauss)
