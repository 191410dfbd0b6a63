"""Attention-based reinforcement learning for job shop scheduling."""

__version__ = "0.1.0"

from .env import ScheduleResult, init_state, run_sequence, step, validate_schedule
from .heuristics import DispatchRule, best_heuristic, rollout
from .instance import BestKnownRegistry, Instance, generate_instance, load_instance, parse_instance
from .model import ArlsParams, ModelConfig, init_params, rollout_batch
from .oracle import oracle_optimal
from .report import gap, run_suite
from .trainer import TrainConfig, train

__all__ = [
    "ArlsParams", "BestKnownRegistry", "DispatchRule", "Instance", "ModelConfig", "ScheduleResult",
    "TrainConfig", "best_heuristic", "gap", "generate_instance", "init_params", "init_state",
    "load_instance", "oracle_optimal", "parse_instance", "rollout", "rollout_batch", "run_sequence",
    "run_suite", "step", "train", "validate_schedule",
]
