"""Training-pair augmentation for the LDR-to-HDR models."""
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter


@dataclass
class AugmentConfig:
    roll: bool = True
    intensity: float = 0.1     # gamma_1 ~ U(-a, a), image scaled by 2^gamma_1
    median: float = 0.1        # gamma_2 ~ U(-a, a), median moved to 0.5 + gamma_2
    hue_deg: float = 5.0
    sharpen_sigma: float = 3.0  # unsharp-mask sigma ~ U(0, s), amount 1
    noise: float = 0.01
    tonemap: float = 0.1       # gamma_3 ~ U(-a, a), input raised to 1 + gamma_3

    @classmethod
    def identity(cls):
        return cls(False, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)


def hue_rotation(deg):
    """Rotation about the grey axis, i.e. within the two opponent-colour axes."""
    u = np.full(3, 1 / np.sqrt(3))
    th = np.radians(deg)
    k = np.array([[0, -u[2], u[1]], [u[2], 0, -u[0]], [-u[1], u[0], 0]])
    return np.eye(3) + np.sin(th) * k + (1 - np.cos(th)) * (k @ k)


def unsharp(img, sigma, amount=1.0):
    if sigma <= 0:
        return img
    blur = gaussian_filter(img, sigma=(sigma, sigma, 0), mode=("nearest", "wrap", "nearest"))
    return img + amount * (img - blur)


def _u(rng, a):
    return float(rng.uniform(-a, a)) if a > 0 else 0.0


def augment(pano, rng, cfg=None):
    """Returns ``(input, target)``: a clipped linear LDR input in [0, 1] and
    the HDR target it was derived from.

    Target side: azimuth roll, intensity scale, median exposure shift.
    Input side: clip, hue shift, unsharp mask, noise, tonemap curve.
    """
    cfg = cfg or AugmentConfig()
    x = np.asarray(pano, np.float64)
    if cfg.roll:
        x = np.roll(x, int(rng.integers(0, x.shape[1])), axis=1)
    x = x * 2.0 ** _u(rng, cfg.intensity)
    med = float(np.median(x))
    if med > 0:
        x = x * (0.5 + _u(rng, cfg.median)) / med
    target = x

    y = np.clip(target, 0.0, 1.0)
    if cfg.hue_deg > 0:
        y = y @ hue_rotation(_u(rng, cfg.hue_deg)).T
    if cfg.sharpen_sigma > 0:
        y = unsharp(y, float(rng.uniform(0, cfg.sharpen_sigma)))
    if cfg.noise > 0:
        y = y + rng.normal(0.0, cfg.noise, size=y.shape)
    y = np.clip(y, 0.0, 1.0)
    y = y ** (1.0 + _u(rng, cfg.tonemap))
    return y, target
