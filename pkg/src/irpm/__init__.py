"""Intergroup preference rewards for training a toy pointwise scorer with GRPO."""

from ._backend import set_backend
from .data import FilterPolicy, PreferencePair, filter_dataset, load_dataset, make_synthetic_dataset
from .evaluation import EvalProtocol, evaluate_pairs
from .grpo import GRPOConfig, TrainState, irpm_train_step, train
from .policy import ScoreBinGrid, ToyScorerPolicy
from .rewards import RewardConfig, RewardVariant, RolloutOutcome, intergroup_rewards, total_rewards

__version__ = "0.1.0"

__all__ = [
    "EvalProtocol",
    "FilterPolicy",
    "GRPOConfig",
    "PreferencePair",
    "RewardConfig",
    "RewardVariant",
    "RolloutOutcome",
    "ScoreBinGrid",
    "ToyScorerPolicy",
    "TrainState",
    "evaluate_pairs",
    "filter_dataset",
    "intergroup_rewards",
    "irpm_train_step",
    "load_dataset",
    "make_synthetic_dataset",
    "set_backend",
    "total_rewards",
    "train",
]
