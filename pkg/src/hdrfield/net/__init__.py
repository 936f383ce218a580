"""Tape-based reverse-mode autodiff, parameter storage and layers."""
from .layers import Conv3x3, Dense, MlpConfig, RadianceMLP
from .params import ParamStore, adam_step, load_checkpoint, restore, save_checkpoint
from .tape import Tape, Tensor, as_tensor

__all__ = [
    "Conv3x3", "Dense", "MlpConfig", "ParamStore", "RadianceMLP", "Tape", "Tensor",
    "adam_step", "as_tensor", "load_checkpoint", "restore", "save_checkpoint",
]
