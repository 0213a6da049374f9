"""Single-channel EEG completion with a two-stage (cascade) Transformer."""

from .cascade import CascadeModel, TrainConfig, compose_stage2_input, train, weighted_loss
from .metrics import dft_magnitude, fd_nrmse, nrmse, rmse_missing
from .signal import (
    MaskMethod,
    Position,
    Segment,
    apply_mask,
    build_mask,
    extract_segments,
    normalize,
)
from .transformer import FULL_PRESET, ModelConfig, Transformer

__version__ = "0.1.0"

__all__ = [
    "CascadeModel",
    "TrainConfig",
    "compose_stage2_input",
    "train",
    "weighted_loss",
    "dft_magnitude",
    "fd_nrmse",
    "nrmse",
    "rmse_missing",
    "MaskMethod",
    "Position",
    "Segment",
    "apply_mask",
    "build_mask",
    "extract_segments",
    "normalize",
    "FULL_PRESET",
    "ModelConfig",
    "Transformer",
]
