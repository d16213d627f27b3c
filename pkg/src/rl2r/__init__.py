"""Reinforcement learning to rank for no-reference quality scoring."""

from .estimator import RL2RRegressor
from .grpo import GrpoConfig
from .policy import CategoricalScorePolicy, GaussianScorePolicy, PolicyParams
from .thurstone import ThurstoneConfig, Variant

__all__ = [
    "RL2RRegressor",
    "GrpoConfig",
    "ThurstoneConfig",
    "Variant",
    "GaussianScorePolicy",
    "CategoricalScorePolicy",
    "PolicyParams",
]

__version__ = "0.1.0"
