"""LDR to HDR: response curves, fusion, augmentation and uplift models."""
from .augment import AugmentConfig, augment, hue_rotation
from .curves import ResponseCurve, fuse_exposures, hat_weight, linearize, saturation_mask
from .model import LearnedUplift, ParametricUplift, UpliftConfig, load_model, uplift
from .training import Ldr2HdrConfig, heldout_render_rmse, loss_hdr, train_ldr2hdr

__all__ = [
    "AugmentConfig", "augment", "hue_rotation", "ResponseCurve", "fuse_exposures",
    "hat_weight", "linearize", "saturation_mask", "LearnedUplift", "ParametricUplift",
    "UpliftConfig", "load_model", "uplift", "Ldr2HdrConfig", "heldout_render_rmse",
    "loss_hdr", "train_ldr2hdr",
]
