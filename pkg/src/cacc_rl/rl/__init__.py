"""Off-policy actor-critic training for platoon control."""
from .agents import ALGOS, Agent, AgentConfig, PolicyController, TD3Config, ddpg_update, td3_update
from .buffer import Batch, ReplayBuffer
from .networks import ZeroActor
from .training import EvalResult, TrainResult, evaluate, seed_streams, train, write_train_log

__all__ = [
    "ALGOS", "Agent", "AgentConfig", "Batch", "EvalResult", "PolicyController", "ReplayBuffer",
    "TD3Config", "TrainResult", "ZeroActor", "ddpg_update", "evaluate", "seed_streams", "td3_update",
    "train", "write_train_log",
]
