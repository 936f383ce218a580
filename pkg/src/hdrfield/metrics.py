"""Image quality metrics for LDR and HDR panoramas."""
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter1d

from .errors import DataError

CEILING_DB = 99.0
LUMA = np.array([0.2126, 0.7152, 0.0722])
PU_MIN, PU_MAX = 0.005, 1e4

# PU21 fits (p1..p7) for the two published variants
PU21 = {
    "banding_glare": (0.353487901, 0.3734658629, 8.277049286e-05, 0.9062562627,
                      0.09150303166, 0.9099517204, 596.3148142),
    "banding": (1.070275272, 0.4088273932, 0.153224308, 0.2520326168,
                1.063512885, 1.14115047, 521.4527484),
}


@dataclass
class MetricConfig:
    pu_encoding: str = "pu21"        # or "log2"
    pu_variant: str = "banding_glare"
    ceiling: float = CEILING_DB
    luminance_scale: float = 100.0   # cd/m^2 per unit radiance

    def __post_init__(self):
        if self.luminance_scale <= 0:
            raise ValueError("luminance scale must be positive")
        if self.pu_encoding not in ("pu21", "log2"):
            raise ValueError(f"unknown PU encoding {self.pu_encoding!r}")
        if self.pu_variant not in PU21:
            raise ValueError(f"unknown PU21 variant {self.pu_variant!r}")


def _pair(a, b):
    a = np.asarray(a, np.float64)
    b = np.asarray(b, np.float64)
    if a.shape != b.shape:
        raise DataError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, peak=1.0, ceiling=CEILING_DB):
    """``10 log10(peak^2 / MSE)``, capped at ``ceiling``."""
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return float(ceiling)
    return float(min(ceiling, 10 * np.log10(peak ** 2 / mse)))


def pu_encode(lum, encoding="pu21", variant="banding_glare"):
    """Perceptually uniform code values of absolute luminance (cd/m^2)."""
    y = np.clip(np.asarray(lum, np.float64), PU_MIN, PU_MAX)
    if encoding == "log2":
        return np.log2(y / PU_MIN)
    p1, p2, p3, p4, p5, p6, p7 = PU21[variant]
    yp = y ** p4
    return p7 * (((p1 + p2 * yp) / (1 + p3 * yp)) ** p5 - p6)


def pu_psnr(a, b, cfg=None):
    """PSNR of PU-encoded luminance with peak ``PU(10^4 cd/m^2)``."""
    cfg = cfg or MetricConfig()
    a, b = _pair(a, b)
    if np.any(a < 0) or np.any(b < 0):
        raise DataError("HDR inputs must be nonnegative")
    la = luminance(a) * cfg.luminance_scale
    lb = luminance(b) * cfg.luminance_scale
    enc = lambda v: pu_encode(v, cfg.pu_encoding, cfg.pu_variant)
    return psnr(enc(la), enc(lb), peak=float(enc(PU_MAX)), ceiling=cfg.ceiling)


def log_psnr(a, b, ceiling=CEILING_DB):
    """PSNR of ``log(1 + e)`` images, peak taken from the reference ``b``."""
    a, b = _pair(a, b)
    la, lb = np.log1p(np.maximum(a, 0)), np.log1p(np.maximum(b, 0))
    peak = max(float(lb.max()), 1e-12)
    return psnr(la, lb, peak=peak, ceiling=ceiling)


def rmse(a, b):
    a, b = _pair(a, b)
    return float(np.sqrt(np.mean((a - b) ** 2)))


def luminance(img):
    img = np.asarray(img, np.float64)
    return img @ LUMA if img.ndim == 3 and img.shape[-1] == 3 else img


def _blur(x, sigma, truncate):
    # rows clamp at the poles, columns wrap in azimuth
    x = gaussian_filter1d(x, sigma, axis=0, mode="nearest", truncate=truncate)
    return gaussian_filter1d(x, sigma, axis=1, mode="wrap", truncate=truncate)


def ssim(a, b, k1=0.01, k2=0.03, sigma=1.5, window=11):
    """Single-scale SSIM on luma over a Gaussian window, data range 1."""
    a, b = _pair(a, b)
    x, y = luminance(a), luminance(b)
    trunc = (window // 2) / sigma
    c1, c2 = k1 ** 2, k2 ** 2
    mx, my = _blur(x, sigma, trunc), _blur(y, sigma, trunc)
    sxx = _blur(x * x, sigma, trunc) - mx * mx
    syy = _blur(y * y, sigma, trunc) - my * my
    sxy = _blur(x * y, sigma, trunc) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def outlier_count(pred, target, factor=10.0):
    """Pixels whose squared log error exceeds ``factor`` times the median."""
    pred, target = _pair(pred, target)
    err = np.mean((np.log1p(np.maximum(pred, 0)) - np.log1p(np.maximum(target, 0))) ** 2, axis=-1)
    med = float(np.median(err))
    return int(np.sum(err > factor * max(med, 1e-20)))
