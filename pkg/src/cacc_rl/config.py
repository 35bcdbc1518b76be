"""Experiment configuration: one declarative file, validated up front, with dotted overrides.

Values are layered as defaults, then the config file, then ``--set``
overrides from the command line. Unknown keys are rejected at every level.
"""
from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .cf_models import IdmParams, KraussParams
from .errors import CaccError, ConfigError
from .rewards import RewardParams, RewardWeights
from .rl.agents import AgentConfig, TD3Config
from .sim import SCENARIO_KINDS, SPEED_MODES, SimConfig


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class SimSection(_Section):
    dt: float = Field(0.1, gt=0)
    n_followers: int = Field(3, ge=1)
    initial_spacing: Optional[float] = None
    initial_speed_mode: str = "match-leader"
    initial_speed: float = 0.0
    a_floor: float = -5.0
    a_ceil: float = 3.0
    collision_penalty: float = -100.0
    follower_length: float = 5.0

    @field_validator("initial_speed_mode")
    @classmethod
    def _mode(cls, v):
        if v not in SPEED_MODES:
            raise ValueError(f"must be one of {SPEED_MODES}")
        return v


class IdmSection(_Section):
    a_max: float = 3.0
    b: float = 2.0
    v0: float = 120.0 / 3.6
    s0: float = 2.0
    T: float = 1.5
    delta: float = 4.0


class KraussSection(_Section):
    t_r: float = 1.0
    b: float = 2.0
    v0: float = 120.0 / 3.6
    a_max: float = 3.0


class RewardWeightsSection(_Section):
    w_g: float = 1.0
    w_s: float = 1.0
    w_c: float = 1.0


class RewardParamsSection(_Section):
    sigma: float = 0.5
    mu: float = math.log(1.5) + 0.25
    ttc_threshold: float = 4.0
    a_max: float = 3.0
    a_min: float = -2.0
    h_cap: float = 100.0


class RewardSection(_Section):
    weights: RewardWeightsSection = RewardWeightsSection()
    params: RewardParamsSection = RewardParamsSection()


class TD3Section(_Section):
    policy_delay: int = Field(2, ge=1)
    target_noise_std: float = Field(0.2, ge=0)
    target_noise_clip: float = Field(0.5, ge=0)


class AgentSection(_Section):
    gamma: float = Field(0.99, ge=0, le=1)
    batch_size: int = Field(64, ge=1)
    warmup_steps: int = Field(1000, ge=0)
    exploration_noise_std: float = Field(0.1, ge=0)
    action_bound: float = Field(2.0, gt=0)
    tau: float = Field(0.005, ge=0, le=1)
    actor_lr: float = Field(1e-4, gt=0)
    critic_lr: float = Field(1e-3, gt=0)
    buffer_capacity: int = Field(100_000, ge=1)
    trunk_hidden: list[int] = [64, 64]
    msg_hidden: list[int] = [32, 32]
    td3: TD3Section = TD3Section()


class CommSection(_Section):
    d_msg: int = Field(8, ge=0)
    mode: Literal["sync", "delayed"] = "sync"


class ScenarioSection(_Section):
    kind: str
    duration: float = Field(60.0, gt=0)
    v_c: float = 15.0
    amplitude: float = 3.0
    period: float = 60.0
    decel: float = 2.0
    accel: float = 1.0
    hold: float = 5.0
    cruise: float = 20.0

    @field_validator("kind")
    @classmethod
    def _kind(cls, v):
        if v not in SCENARIO_KINDS or v == "replay":
            raise ValueError(f"must be one of {[k for k in SCENARIO_KINDS if k != 'replay']}")
        return v


def _default_scenarios() -> dict:
    return {
        "constant": ScenarioSection(kind="constant", v_c=15.0, duration=60.0),
        "sinusoid": ScenarioSection(kind="sinusoid", v_c=20.0, amplitude=3.0, period=60.0, duration=60.0),
        "stop-and-go": ScenarioSection(kind="stop-and-go", v_c=15.0, decel=2.0, accel=1.0, hold=5.0,
                                       cruise=10.0, duration=120.0),
    }


class TrainSection(_Section):
    algo: Literal["ddpg", "td3", "ca-ddpg", "ca-td3"] = "ca-ddpg"
    episodes: int = Field(150, ge=0)
    eval_every: int = Field(5, ge=1)
    source: Literal["scenarios", "data"] = "scenarios"
    train_scenarios: list[str] = ["sinusoid"]
    eval_scenarios: list[str] = ["sinusoid"]


class DataSection(_Section):
    input: Optional[str] = None
    dir: Optional[str] = None
    schema_map: dict[str, str] = Field(default_factory=dict, alias="schema")
    units: Literal["feet", "meters"] = "feet"
    min_duration: float = Field(60.0, gt=0)
    frame_dt: float = Field(0.1, gt=0)
    window: int = Field(5, ge=1)
    train_fraction: float = Field(0.7, gt=0, lt=1)

    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class MetricsSection(_Section):
    ttc_thresholds: list[float] = [4.0, 1.5]
    h_cap: float = 100.0


class OutputSection(_Section):
    dir: str = "runs"
    messages: bool = False


class ExperimentConfig(_Section):
    seed: int = 0
    sim: SimSection = SimSection()
    idm: IdmSection = IdmSection()
    krauss: KraussSection = KraussSection()
    reward: RewardSection = RewardSection()
    agent: AgentSection = AgentSection()
    comm: CommSection = CommSection()
    scenarios: dict[str, ScenarioSection] = Field(default_factory=_default_scenarios)
    train: TrainSection = TrainSection()
    data: DataSection = DataSection()
    metrics: MetricsSection = MetricsSection()
    output: OutputSection = OutputSection()

    # -- conversion into the runtime dataclasses --------------------------------------

    def sim_config(self, n_followers: Optional[int] = None) -> SimConfig:
        d = self.sim.model_dump()
        if n_followers is not None:
            d["n_followers"] = n_followers
        return SimConfig(**d)

    def idm_params(self) -> IdmParams:
        return IdmParams(**self.idm.model_dump())

    def krauss_params(self) -> KraussParams:
        return KraussParams(**self.krauss.model_dump())

    def reward_weights(self) -> RewardWeights:
        return RewardWeights(**self.reward.weights.model_dump())

    def reward_params(self) -> RewardParams:
        return RewardParams(**self.reward.params.model_dump())

    def agent_config(self) -> AgentConfig:
        d = self.agent.model_dump()
        d["td3"] = TD3Config(**d["td3"])
        return AgentConfig(d_msg=self.comm.d_msg, **d)

    def to_dict(self) -> dict:
        return self.model_dump(mode="json", by_alias=True)


# -- loading ------------------------------------------------------------------------

def parse_override(text: str) -> tuple[list[str], object]:
    """``a.b.c=value``; the value is read as YAML so numbers, booleans and lists work."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    path = [p for p in key.strip().split(".")]
    if not all(path):
        raise ConfigError(f"override {text!r} has an empty key segment")
    try:
        value = yaml.safe_load(raw) if raw.strip() else ""
    except yaml.YAMLError as exc:
        raise ConfigError(f"override {text!r}: {exc}") from None
    return path, value


def apply_override(raw: dict, path: list[str], value) -> None:
    node = raw
    for part in path[:-1]:
        nxt = node.get(part)
        if nxt is None:
            nxt = node[part] = {}
        elif not isinstance(nxt, dict):
            raise ConfigError(f"cannot set {'.'.join(path)}: {part!r} is not a section")
        node = nxt
    node[path[-1]] = value


def read_config_file(path) -> dict:
    text = Path(path).read_text()
    try:
        data = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"{path}: cannot parse config: {exc}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def _format_validation(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"])
        parts.append(f"{loc}: {err['msg']}")
    return "; ".join(parts)


def _merge(base: dict, top: dict) -> dict:
    out = dict(base)
    for key, value in top.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def build_config(raw: Optional[dict] = None, overrides=(), seed: Optional[int] = None) -> ExperimentConfig:
    """Defaults, then ``raw`` (a parsed file), then overrides, then ``seed``."""
    raw = _merge(ExperimentConfig().to_dict(), json.loads(json.dumps(raw or {})))
    for text in overrides:
        path, value = parse_override(text)
        apply_override(raw, path, value)
    if seed is not None:
        raw["seed"] = seed
    try:
        cfg = ExperimentConfig.model_validate(raw)
        # the runtime dataclasses carry further cross-field checks
        cfg.sim_config(), cfg.idm_params(), cfg.krauss_params()
        cfg.reward_weights(), cfg.reward_params(), cfg.agent_config()
    except ValidationError as exc:
        raise ConfigError(f"invalid config: {_format_validation(exc)}") from None
    except (CaccError, ValueError, TypeError) as exc:
        raise ConfigError(f"invalid config: {exc}") from None
    return cfg


def load_config(path=None, overrides=(), seed: Optional[int] = None) -> ExperimentConfig:
    raw = read_config_file(path) if path is not None else {}
    return build_config(raw, overrides, seed)


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True)
