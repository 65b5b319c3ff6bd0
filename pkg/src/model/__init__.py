"""Dual-encoder MLP with analytic gradients and checkpointing"""

from .dual_encoder import (
    ALL_BLOCKS,
    PRIMARY_BLOCKS,
    SECONDARY_BLOCKS,
    ArchSpec,
    DualEncoderModel,
    LocalOptimizer,
    TrainBlocks,
    init_params,
    load_checkpoint,
    save_checkpoint,
    sgd_step,
)

__all__ = [
    "ALL_BLOCKS",
    "PRIMARY_BLOCKS",
    "SECONDARY_BLOCKS",
    "ArchSpec",
    "DualEncoderModel",
    "LocalOptimizer",
    "TrainBlocks",
    "init_params",
    "load_checkpoint",
    "save_checkpoint",
    "sgd_step",
]
