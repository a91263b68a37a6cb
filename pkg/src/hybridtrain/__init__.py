"""Hybrid backprop + evolutionary training of a small CNN's output layer."""

__version__ = "0.1.0"

from .evolution import EvolutionConfig, run_evolution
from .nn import Model, build_model, evaluate, get_tail_weights, set_tail_weights, small_conv_net
from .trainer import TrainConfig, run_comparison, train_hybrid, train_regular

__all__ = [
    "EvolutionConfig",
    "Model",
    "TrainConfig",
    "build_model",
    "evaluate",
    "get_tail_weights",
    "run_comparison",
    "run_evolution",
    "set_tail_weights",
    "small_conv_net",
    "train_hybrid",
    "train_regular",
]
