"""Inverse-tonemapping models.

Both models leave unsaturated pixels at their linearized value and only
ever boost saturated ones. The learned model is a small encoder-decoder
whose features are gated by a parallel attention stream.
"""
from dataclasses import asdict, dataclass

import numpy as np

from ..errors import DataError
from ..net import ParamStore, load_checkpoint, restore, save_checkpoint
from ..net import tape as T
from ..net.layers import Conv3x3
from .curves import ResponseCurve, linearize, saturation_mask


@dataclass
class ParametricUplift:
    """``lin(v) * (1 + (B - 1) * mask(v) ** p)``."""
    tau: float = 0.9
    exponent: float = 2.0
    max_boost: float = 16.0

    def __post_init__(self):
        if not 0 < self.tau < 1:
            raise ValueError("tau must lie in (0, 1)")
        if self.max_boost < 1:
            raise ValueError("max boost must be >= 1")

    def __call__(self, ldr, curve):
        lin = linearize(ldr, curve)
        m = saturation_mask(ldr, self.tau)[..., None]
        return lin * (1 + (self.max_boost - 1) * m ** self.exponent)


@dataclass
class UpliftConfig:
    widths: tuple = (16, 32, 64, 128)
    attention_width: int = 8
    tau: float = 0.9
    boost_gain: float = 4.0       # log-boost per unit of head output
    seed: int = 0

    def to_dict(self):
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d


class LearnedUplift:
    """Encoder-decoder over gamma-encoded LDR input (NHWC).

    ``forward`` returns the linear HDR prediction and the attention logits.
    The attention map multiplies the last decoder features; the prediction
    is ``lin * exp(g * m * softplus(o))`` with ``o`` the head output, ``m``
    the fixed saturation mask of the input and ``g`` a fixed gain, so the
    boost is nonnegative and zero wherever ``m`` is.
    """

    def __init__(self, cfg=None, dtype=np.float32):
        self.cfg = cfg = cfg or UpliftConfig()
        rng = np.random.default_rng(cfg.seed)
        self.store = ParamStore(dtype)
        w = list(cfg.widths)
        self.levels = len(w)
        self.enc = []
        c_in = 3
        for k, c in enumerate(w):
            self.enc.append((Conv3x3(self.store, f"enc{k}a", c_in, c, rng),
                             Conv3x3(self.store, f"enc{k}b", c, c, rng)))
            c_in = c
        self.dec = []
        for k in range(len(w) - 2, -1, -1):
            self.dec.append(Conv3x3(self.store, f"dec{k}", w[k + 1] + w[k], w[k], rng))
        self.head = Conv3x3(self.store, "head", w[0], 3, rng, bias=-2.0)
        aw = cfg.attention_width
        self.att = [Conv3x3(self.store, "att0", 3, aw, rng),
                    Conv3x3(self.store, "att1", aw, aw, rng),
                    Conv3x3(self.store, "att2", aw, 1, rng)]
        self.store.build()

    @property
    def multiple(self):
        return 2 ** (self.levels - 1)

    def forward(self, ldr, curve):
        """``ldr`` (H, W, 3) or (N, H, W, 3) in [0, 1]."""
        v = np.asarray(ldr, np.float64)
        single = v.ndim == 3
        if single:
            v = v[None]
        h, w = v.shape[1:3]
        if h % self.multiple or w % self.multiple:
            raise DataError(f"learned uplift needs sizes divisible by {self.multiple}")
        dt = self.store.dtype
        lin = linearize(v, curve).astype(dt)
        m = saturation_mask(v, self.cfg.tau)[..., None].astype(dt)
        x = T.Tensor(v.astype(dt))

        skips = []
        hcur = x
        for k, (ca, cb) in enumerate(self.enc):
            if k:
                hcur = T.avgpool2(hcur)
            hcur = T.relu(cb(T.relu(ca(hcur))))
            skips.append(hcur)
        for conv, skip in zip(self.dec, reversed(skips[:-1])):
            hcur = T.relu(conv(T.concat([T.upsample2(hcur), skip], axis=-1)))

        a = T.relu(self.att[0](x))
        a = T.relu(self.att[1](a))
        logits = self.att[2](a)
        gated = T.mul(hcur, T.sigmoid(logits))
        boost = T.mul(T.softplus(self.head(gated)), m * self.cfg.boost_gain)
        pred = T.mul(lin, T.exp(boost))
        if single:
            pred = T.reshape(pred, pred.shape[1:])
            logits = T.reshape(logits, logits.shape[1:])
        return pred, logits

    def __call__(self, ldr, curve):
        pred, _ = self.forward(ldr, curve)
        return pred.data.astype(np.float64)

    def save(self, path, extra=None):
        save_checkpoint(path, self.store, "ldr2hdr", self.cfg.to_dict(), extra)

    @classmethod
    def load(cls, path):
        header, values, m, v = load_checkpoint(path)
        if header.get("kind") != "ldr2hdr":
            raise DataError(f"{path}: not an LDR2HDR checkpoint")
        cfg = header["config"]
        cfg["widths"] = tuple(cfg["widths"])
        model = cls(UpliftConfig(**cfg))
        if len(model.store) != len(values):
            raise DataError(f"{path}: parameter count does not match its config")
        restore(model.store, values, m, v, header.get("step", 0))
        return model


def load_model(spec, **kwargs):
    """``'parametric'`` or a checkpoint path."""
    if str(spec) == "parametric":
        return ParametricUplift(**kwargs)
    return LearnedUplift.load(spec)


def uplift(model, ldr, curve=None):
    """Linear HDR estimate of an LDR panorama. Never below ``linearize``."""
    curve = curve or ResponseCurve()
    lin = linearize(ldr, curve)
    out = np.maximum(model(ldr, curve), lin)
    # pixels outside the saturation mask stay bit-exact (the model may run in float32)
    tau = getattr(getattr(model, "cfg", model), "tau", 0.9)
    untouched = saturation_mask(ldr, tau)[..., None] == 0
    return np.where(untouched, lin, out).astype(np.float32)
