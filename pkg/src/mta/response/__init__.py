"""Pluggable purchase-probability models and their trainer."""

from .base import (
    Batch,
    ShapeMismatch,
    bernoulli_ll,
    build_counts,
    flatten_params,
    assign_flat,
    log_likelihood,
    predict,
    sigmoid,
)
from .birnn import BiRecurrentModel
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .init import init_parameters, orthogonal_blocks, truncated_normal
from .logistic import LogisticModel
from .training import Adam, Diverged, TrainConfig, TrainLog, build_batch, evaluate, train

__all__ = [
    "Adam",
    "Batch",
    "BiRecurrentModel",
    "CheckpointError",
    "Diverged",
    "LogisticModel",
    "ShapeMismatch",
    "TrainConfig",
    "TrainLog",
    "assign_flat",
    "bernoulli_ll",
    "build_batch",
    "build_counts",
    "evaluate",
    "flatten_params",
    "init_parameters",
    "load_checkpoint",
    "log_likelihood",
    "orthogonal_blocks",
    "predict",
    "save_checkpoint",
    "sigmoid",
    "train",
    "truncated_normal",
]
