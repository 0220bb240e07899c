"""Optimizer, metrics and the two-stage training protocol."""

from .metrics import Metrics
from .optim import AdamState, adam_step
from .trainer import (LOSSES, RunReport, TrainConfig, adapt_stage2, binary_batches, evaluate, evaluate_projected,
                      export_embeddings, predict, pretrain_stage1)

__all__ = [
    "Metrics", "AdamState", "adam_step", "LOSSES", "RunReport", "TrainConfig", "adapt_stage2",
    "binary_batches", "evaluate", "evaluate_projected", "export_embeddings", "predict", "pretrain_stage1",
]
