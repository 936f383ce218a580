"""Loss and training loop for the learned uplift model."""
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import streams
from ..errors import DataError, NumericError
from ..geom import downsample
from ..net import adam_step
from ..net import tape as T
from ..prt import to_env
from .augment import AugmentConfig, augment
from .curves import ResponseCurve, saturation_mask
from .model import LearnedUplift, UpliftConfig, uplift

LOG_FLOOR = 1e-2


def scale_invariant_log(pred, target, floor=LOG_FLOOR):
    """``mean(d^2) - mean(d)^2`` with ``d = log(pred) - log(target)``, over
    entries where both exceed ``floor``.

    Near-black entries are left out: their log ratio is dominated by noise
    and, through the mean, would drag every other residual with it.
    """
    target = np.asarray(target, np.float64)
    valid = (pred.data > floor) & (target > floor)
    n = int(valid.sum())
    if n == 0:
        return T.Tensor(np.zeros((), pred.dtype))
    w = (valid / n).astype(pred.dtype)
    safe_t = np.where(valid, target, 1.0)
    d = T.sub(T.log(T.add(pred, np.where(valid, 0.0, 1.0).astype(pred.dtype))),
              np.log(safe_t).astype(pred.dtype))
    mean_d = T.sum_(T.mul(d, w))
    return T.sub(T.sum_(T.mul(T.square(d), w)), T.square(mean_d))


def mask_bce(logits, mask):
    """Binary cross-entropy of ``sigmoid(logits)`` against ``mask``, from logits."""
    y = np.asarray(mask, np.float64).reshape(logits.shape).astype(logits.dtype)
    return T.mean(T.sub(T.softplus(logits), T.mul(logits, y)))


def _pool_to(x, factor):
    while factor > 1:
        x = T.avgpool2(x)
        factor //= 2
    return x


def rendering_loss(pred, target, tm, norm="relative"):
    """``|| T y - T t ||_2`` on the probe image, with ``y`` box-filtered to
    the transport's environment resolution, computed per image and averaged.

    ``norm`` sets the normalization: ``"none"`` is the raw norm, ``"rmse"``
    divides by the square root of the entry count, ``"relative"`` divides by
    ``|| T t ||_2`` so the term is dimensionless like the log loss.
    """
    if norm not in ("none", "rmse", "relative"):
        raise ValueError(f"unknown rendering-loss normalization {norm!r}")
    ew, eh = tm.env_res
    p = pred if pred.ndim == 4 else T.reshape(pred, (1, *pred.shape))
    factor = p.shape[2] // ew
    if factor * ew != p.shape[2] or factor & (factor - 1):
        raise DataError(f"prediction width {p.shape[2]} does not pool to {ew}")
    n = p.shape[0]
    y = T.reshape(_pool_to(p, factor), (n, ew * eh, 3))
    t = np.stack([to_env(tm, ti).reshape(-1, 3)
                  for ti in np.reshape(target, (-1, *target.shape[-3:]))])
    albedo = tm.albedo.astype(pred.dtype)
    mat = T.Tensor(tm.matrix.astype(pred.dtype))
    diff = T.mul(T.matmul(mat, T.sub(y, t.astype(pred.dtype))), albedo)
    ss = T.sum_(T.square(diff), axis=(1, 2))
    if norm == "rmse":
        scale = np.full(n, 1.0 / (diff.shape[1] * 3))
    elif norm == "relative":
        ref = (tm.matrix @ t) * tm.albedo
        scale = 1.0 / np.maximum(np.sum(ref ** 2, axis=(1, 2)), 1e-12)
    else:
        scale = np.ones(n)
    per_image = T.sqrt(T.add(T.mul(ss, scale.astype(pred.dtype)), 1e-12))
    return T.mean(per_image)


def loss_hdr(pred, target, transport=None, logits=None, true_mask=None, rend_norm="relative"):
    """Scale-invariant log loss + mask BCE (when logits are given) + rendering
    loss (when a transport is given), equally weighted.

    Returns ``(loss tensor, {term: value})``.
    """
    target = np.asarray(target, np.float64)
    if tuple(pred.shape) != target.shape:
        raise DataError(f"prediction {pred.shape} and target {target.shape} differ")
    terms = {"silog": scale_invariant_log(pred, target)}
    if logits is not None:
        terms["bce"] = mask_bce(logits, true_mask)
    if transport is not None:
        terms["rend"] = rendering_loss(pred, target, transport, rend_norm)
    total = None
    for t in terms.values():
        total = t if total is None else T.add(total, t)
    return total, {k: float(v.data) for k, v in terms.items()}


@dataclass
class Ldr2HdrConfig:
    iterations: int = 1000
    batch: int = 4
    width: int = 64
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    gamma: float = 2.2
    render_loss: bool = True
    seed: int = 0
    model: UpliftConfig = field(default_factory=UpliftConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def to_dict(self):
        return asdict(self)


def _prepare(panos, width):
    out = []
    for p in panos:
        p = np.asarray(p, np.float64)
        factor = p.shape[1] // width
        if factor < 1 or factor * width != p.shape[1]:
            raise DataError(f"cannot reduce width {p.shape[1]} to {width}")
        out.append(downsample(p, factor))
    return out


def make_pair(pano, rng, curve, aug):
    """Augmented (gamma-encoded LDR input, linear target, true saturation mask)."""
    lin_in, target = augment(pano, rng, aug)
    ldr = curve.encode(lin_in)
    true_mask = saturation_mask(curve.encode(np.clip(target, 0, 1)))
    return ldr, target, true_mask


def train_ldr2hdr(panos, cfg=None, transport=None, log=None):
    """Train a :class:`LearnedUplift` on HDR panoramas.

    Each step draws ``batch`` panoramas and augmentations from the stream
    ``(seed, step)``. With ``cfg.render_loss`` the transport must be given.
    Returns the model and a list of per-step loss dicts.
    """
    cfg = cfg or Ldr2HdrConfig()
    if cfg.render_loss and transport is None:
        raise ValueError("rendering loss requested without a transport matrix")
    data = _prepare(panos, cfg.width)
    if not data:
        raise DataError("no training panoramas")
    curve = ResponseCurve(cfg.gamma)
    model = LearnedUplift(cfg.model)
    history = []
    for it in range(cfg.iterations):
        rng = streams.generator(cfg.seed, 2, it)
        pick = rng.integers(0, len(data), size=cfg.batch)
        pairs = [make_pair(data[k], rng, curve, cfg.augment) for k in pick]
        ldr = np.stack([p[0] for p in pairs])
        tgt = np.stack([p[1] for p in pairs])
        msk = np.stack([p[2] for p in pairs])
        model.store.zero_grad()
        with T.Tape() as tape:
            pred, logits = model.forward(ldr, curve)
            loss, terms = loss_hdr(pred, tgt, transport if cfg.render_loss else None,
                                   logits, msk[..., None])
            tape.backward(loss)
        value = float(loss.data)
        if not np.isfinite(value):
            raise NumericError(f"non-finite LDR2HDR loss at step {it}")
        ok = adam_step(model.store, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
        rec = {"iteration": it, "loss": value, **terms, "stepped": ok}
        history.append(rec)
        if log is not None:
            log(rec)
    return model, history


def exposure_normalize(pano, median=0.5):
    """Scale so the median value is ``median`` (the deterministic version of
    the training-time exposure shift)."""
    pano = np.asarray(pano, np.float64)
    med = float(np.median(pano))
    return pano * (median / med) if med > 0 else pano


def heldout_render_rmse(model, panos, transport, width=64, gamma=2.2):
    """Mean probe RMSE of uplifted clipped captures against their HDR sources."""
    from ..prt import render_rmse
    curve = ResponseCurve(gamma)
    errs = []
    for p in _prepare(panos, width):
        target = exposure_normalize(p)
        ldr = curve.encode(np.clip(target, 0, 1))
        pred = uplift(model, ldr, curve)
        errs.append(render_rmse(to_env(transport, pred), to_env(transport, target), transport))
    return float(np.mean(errs)), errs


__all__ = ["loss_hdr", "scale_invariant_log", "mask_bce", "rendering_loss", "Ldr2HdrConfig",
           "train_ldr2hdr", "make_pair", "exposure_normalize", "heldout_render_rmse"]
