"""Camera response, exposure fusion and saturation masks."""
from dataclasses import dataclass, field

import numpy as np

from ..errors import DataError

FUSE_LOW = 0.005
FUSE_HIGH = 0.995


@dataclass
class ResponseCurve:
    """``v = clip(e / gain) ** (1 / gamma)``, inverted by :meth:`linearize`."""
    gamma: float = 2.2
    gain: np.ndarray = field(default_factory=lambda: np.ones(3))

    def __post_init__(self):
        self.gain = np.broadcast_to(np.asarray(self.gain, np.float64), (3,)).copy()
        if not self.gamma > 0 or np.any(self.gain <= 0):
            raise ValueError("gamma and gains must be positive")

    def linearize(self, v):
        return linearize(v, self)

    def encode(self, e):
        e = np.asarray(e, np.float64) / self.gain
        return np.clip(e, 0.0, 1.0) ** (1.0 / self.gamma)


def linearize(ldr, curve):
    """``gain * v ** gamma`` per channel; LDR values must lie in [0, 1]."""
    v = np.asarray(ldr, np.float64)
    if v.size and (v.min() < 0 or v.max() > 1 or not np.isfinite(v).all()):
        raise DataError("LDR values must lie in [0, 1]")
    return curve.gain * v ** curve.gamma


def hat_weight(v):
    w = 1.0 - np.abs(2.0 * np.asarray(v, np.float64) - 1.0)
    return np.where((v <= FUSE_LOW) | (v >= FUSE_HIGH), 0.0, w)


def fuse_exposures(stack, curve):
    """Weighted average of ``lin(v_k) / 2^k`` over the bracket.

    Pixels with no usable reading fall back to the shortest exposure.
    """
    if len(stack) == 0:
        raise DataError("empty exposure stack")
    stops = np.asarray(stack.stops, np.float64)
    if len(stops) >= 2 and np.any(np.diff(stops) <= 0):
        raise DataError("exposure multipliers must be strictly increasing")
    num = 0.0
    den = 0.0
    for k, frame in zip(stops, stack.frames):
        v = np.asarray(frame, np.float64)
        w = hat_weight(v)
        num = num + w * linearize(v, curve) / 2.0 ** k
        den = den + w
    shortest = linearize(stack.frames[0], curve) / 2.0 ** stops[0]
    with np.errstate(invalid="ignore", divide="ignore"):
        fused = np.where(den > 0, num / np.where(den > 0, den, 1.0), shortest)
    return fused.astype(np.float32)


def smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


def saturation_mask(ldr, tau=0.9):
    """Smoothstep of the max channel from 0 at ``tau`` to 1 at 1.0."""
    if not 0 < tau < 1:
        raise ValueError("tau must lie in (0, 1)")
    peak = np.asarray(ldr, np.float64).max(axis=-1)
    return smoothstep((peak - tau) / (1.0 - tau))
