"""Radiance-field training in log space and held-out evaluation."""
import csv
import dataclasses
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import imgio, metrics, streams
from .errors import DataError, NumericError
from .field import FieldConfig, RadianceField
from .geom import downsample, sample_training_rays
from .hdr.curves import ResponseCurve, linearize
from .net import load_checkpoint, restore, save_checkpoint
from .net import adam_step
from .net import tape as T
from .render import RenderConfig, render_panorama, render_rays

CKPT_KIND = "field"


def log_map(e):
    """``E = ln(1 + e)`` for nonnegative radiance."""
    e = np.asarray(e, np.float64)
    if np.any(e < 0):
        raise DataError("radiance must be nonnegative")
    return np.log1p(e)


def loss_nerf(pred, targets, mask_flags=None, space="log"):
    """Mean over unmasked rays of ``||E_pred - E_target||^2``.

    ``pred`` is a tensor of rendered radiance (rays, channels) or (rays,);
    ``mask_flags`` marks rays to ignore. In ``linear`` space the raw
    radiance is compared instead of ``log(1 + e)``.
    """
    if space not in ("log", "linear"):
        raise ValueError(f"unknown loss space {space!r}")
    pred = T.as_tensor(pred)
    targets = np.asarray(targets, np.float64)
    if targets.shape != tuple(pred.shape):
        raise DataError(f"prediction {pred.shape} and target {targets.shape} differ")
    n = pred.shape[0]
    keep = np.ones(n, bool) if mask_flags is None else ~np.asarray(mask_flags, bool)
    if keep.shape != (n,):
        raise DataError("mask flags must have one entry per ray")
    if not keep.any():
        raise DataError("empty batch: every ray is masked")
    if space == "log":
        p, t = T.log1p(pred), log_map(targets)
    else:
        p, t = pred, targets
    sq = T.square(T.sub(p, t.astype(pred.dtype)))
    if sq.ndim > 1:
        sq = T.sum_(sq, axis=tuple(range(1, sq.ndim)))
    w = (keep / keep.sum()).astype(pred.dtype)
    return T.sum_(T.mul(sq, w))


# ------------------------------------------------------------ configuration

@dataclass
class TrainConfig:
    loss_space: str = "log"          # log | linear
    sampling: str = "spherical"      # spherical | planar
    batch_rays: int = 1024
    n_coarse: int = 64
    n_fine: int = 128
    iterations: int = 500000
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    checkpoint_every: int = 1000
    width: int = 256
    depth: int = 8
    skip: int = 4
    pos_levels: int = 10
    dir_levels: int = 4
    bg_levels: int = 10
    fg_encoding: str = "ipe"
    sharing: str = "separate"
    t_near: float = 0.02
    downsample: int = 1
    dtype: str = "float32"

    def __post_init__(self):
        if self.loss_space not in ("log", "linear"):
            raise ValueError(f"loss_space must be log or linear, got {self.loss_space!r}")
        if self.sampling not in ("spherical", "planar"):
            raise ValueError(f"sampling must be spherical or planar, got {self.sampling!r}")
        if self.batch_rays < 1 or self.n_coarse < 1 or self.n_fine < 0:
            raise ValueError("batch and sample counts must be >= 1")
        if self.iterations < 0 or self.checkpoint_every < 1 or self.downsample < 1:
            raise ValueError("iterations >= 0, checkpoint_every >= 1 and downsample >= 1 required")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    def field_config(self):
        return FieldConfig(self.width, self.depth, self.skip, self.pos_levels, self.dir_levels,
                           self.bg_levels, self.fg_encoding, self.sharing, self.seed)

    def render_config(self):
        return RenderConfig(self.n_coarse, self.n_fine, self.t_near)

    def to_dict(self):
        return asdict(self)


def parse_config(text, where="config"):
    """``key = value`` lines into a :class:`TrainConfig`; unknown keys are errors."""
    fields = {f.name: f for f in dataclasses.fields(TrainConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"{where}:{lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in fields:
            raise DataError(f"{where}:{lineno}: unknown key {key!r}")
        kind = type(fields[key].default)
        try:
            values[key] = kind(raw)
        except ValueError:
            raise DataError(f"{where}:{lineno}: bad value {raw!r} for {key}") from None
    try:
        return TrainConfig(**values)
    except ValueError as exc:
        raise DataError(f"{where}: {exc}") from None


def read_config(path):
    return parse_config(Path(path).read_text(), str(path))


# ------------------------------------------------------------ data

@dataclass
class TrainView:
    pose: imgio.Pose        # normalized scene coordinates
    radiance: np.ndarray    # (H, W, 3) linear
    mask: np.ndarray        # (H, W) bool, True = ignored


def manifest_radiance(manifest, pano):
    """Linear radiance of a manifest image (LDR captures are linearized and
    divided by their exposure multiplier)."""
    if manifest.kind == "ldr":
        return linearize(pano, ResponseCurve(manifest.gamma)) / 2.0 ** manifest.exposure
    return np.asarray(pano, np.float64)


def load_views(manifest, factor=1):
    """Views of a manifest in normalized coordinates, box-filtered by ``factor``."""
    if isinstance(manifest, (str, Path)):
        manifest = imgio.read_manifest(manifest)
    views = []
    for v in manifest.views:
        rad = manifest_radiance(manifest, imgio.read_pfm(v.pano))
        mask = np.zeros(rad.shape[:2], bool) if v.mask is None else imgio.read_mask(v.mask)
        if mask.shape != rad.shape[:2]:
            raise DataError(f"{v.mask}: mask size differs from {v.pano}")
        if factor > 1:
            rad = downsample(rad, factor)
            mask = downsample(mask[..., None].astype(np.float64), factor)[..., 0] > 0
        views.append(TrainView(manifest.normalized_pose(v.pose), rad, mask))
    return views


# ------------------------------------------------------------ checkpoints

@dataclass
class FieldModel:
    field: RadianceField
    config: TrainConfig
    scale: float
    center: np.ndarray
    iteration: int = 0

    def normalized_pose(self, pose):
        return imgio.Pose(pose.frame_id, (np.asarray(pose.position) - self.center) * self.scale,
                          pose.orientation)


def new_model(cfg, scale=1.0, center=(0.0, 0.0, 0.0)):
    field = RadianceField(cfg.field_config(), np.dtype(cfg.dtype))
    return FieldModel(field, cfg, float(scale), np.asarray(center, np.float64))


def save_model(model, path):
    extra = {"scale": model.scale, "center": list(map(float, model.center)),
             "iteration": model.iteration}
    save_checkpoint(path, model.field.store, CKPT_KIND, model.config.to_dict(), extra)


def load_model(path):
    header, values, m, v = load_checkpoint(path)
    if header.get("kind") != CKPT_KIND:
        raise DataError(f"{path}: not a radiance-field checkpoint")
    cfg = TrainConfig(**header["config"])
    extra = header.get("extra", {})
    model = new_model(cfg, extra.get("scale", 1.0), extra.get("center", (0, 0, 0)))
    if len(model.field.store) != len(values):
        raise DataError(f"{path}: parameter count does not match its config")
    restore(model.field.store, values, m, v, header.get("step", 0))
    model.iteration = int(extra.get("iteration", 0))
    return model


# ------------------------------------------------------------ training

@dataclass
class LossReport:
    iteration: int
    loss: float
    coarse: float
    fine: float
    grad_norm: float

    FIELDS = ("iteration", "loss", "coarse", "fine", "grad_norm")

    def row(self):
        return [self.iteration, repr(self.loss), repr(self.coarse), repr(self.fine),
                repr(self.grad_norm)]


def training_step(model, views, it):
    """Loss tensor and its terms for iteration ``it``; draws come from the
    stream ``(seed, 3, it)`` so a resumed run replays the same batches."""
    cfg = model.config
    rng = streams.generator(cfg.seed, 3, it)
    view = views[int(rng.integers(len(views)))]
    batch = sample_training_rays(view.pose, view.radiance, view.mask, cfg.batch_rays, rng,
                                 cfg.sampling)
    coarse, fine = render_rays(model.field, batch.rays, cfg.render_config(), rng)
    lc = loss_nerf(coarse.rgb, batch.targets, space=cfg.loss_space)
    total = lc
    lf = None
    if fine is not None:
        lf = loss_nerf(fine.rgb, batch.targets, space=cfg.loss_space)
        total = T.add(lc, lf)
    return total, float(lc.data), float(lf.data) if lf is not None else 0.0


def train_field(manifest, cfg, out=None, report=None, resume=False, views=None):
    """Fit a radiance field to the views of ``manifest``.

    ``report`` receives a :class:`LossReport` per step. With ``out`` set,
    checkpoints are written every ``cfg.checkpoint_every`` steps and at the
    end; ``resume`` continues from an existing ``out``. A non-finite loss
    stops training with the last good state saved.
    """
    if views is None:
        if isinstance(manifest, (str, Path)):
            manifest = imgio.read_manifest(manifest)
        views = load_views(manifest, cfg.downsample)
        scale, center = manifest.scale, manifest.center
    else:
        scale, center = 1.0, np.zeros(3)
    if not views:
        raise DataError("no training views")
    if resume and out is not None and Path(out).exists():
        model = load_model(out)
        if model.config.to_dict() != {**cfg.to_dict(), "iterations": model.config.iterations}:
            raise DataError(f"{out}: checkpoint was trained with a different config")
        model.config = cfg
    else:
        model = new_model(cfg, scale, center)
    store = model.field.store
    for it in range(model.iteration, cfg.iterations):
        store.zero_grad()
        with T.Tape() as tape:
            loss, lc, lf = training_step(model, views, it)
            value = float(loss.data)
            if not np.isfinite(value):
                if out is not None:
                    save_model(model, out)
                raise NumericError(f"non-finite loss at iteration {it}")
            tape.backward(loss)
        gnorm = float(np.linalg.norm(store.grads.astype(np.float64)))
        if not adam_step(store, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps):
            if out is not None:
                save_model(model, out)
            raise NumericError(f"non-finite gradient at iteration {it}")
        model.iteration = it + 1
        if report is not None:
            report(LossReport(it, value, lc, lf, gnorm))
        if out is not None and model.iteration % cfg.checkpoint_every == 0:
            save_model(model, out)
    if out is not None:
        save_model(model, out)
    return model


class CsvReport:
    """LossReport sink writing CSV lines to an open text stream."""

    def __init__(self, stream):
        self.writer = csv.writer(stream, lineterminator="\n")
        self.writer.writerow(LossReport.FIELDS)
        self.rows = []

    def __call__(self, rep):
        self.rows.append(rep)
        self.writer.writerow(rep.row())


# ------------------------------------------------------------ evaluation

EVAL_FIELDS = ("dataset", "view", "pu_psnr", "rmse", "psnr", "ssim", "log_psnr")


def display(e, scale=1.0, gamma=2.2):
    """Clip-and-gamma view of ``scale * e`` for LDR metrics."""
    return np.clip(scale * np.asarray(e, np.float64), 0, 1) ** (1 / gamma)


def display_scale(ref, median=0.5):
    """Exposure putting the reference median at ``median``."""
    med = float(np.median(np.asarray(ref, np.float64)))
    return median / med if med > 0 else 1.0


def score(pred, ref, transport=None, metric_cfg=None, gamma=2.2):
    """Metric row for one rendered panorama against its reference."""
    from . import prt
    if transport is not None:
        err = prt.render_rmse(prt.to_env(transport, pred), prt.to_env(transport, ref), transport)
    else:
        err = metrics.rmse(pred, ref)
    k = display_scale(ref)
    a, b = display(pred, k, gamma), display(ref, k, gamma)
    return {"pu_psnr": metrics.pu_psnr(np.maximum(pred, 0), ref, metric_cfg),
            "rmse": err,
            "psnr": metrics.psnr(a, b),
            "ssim": metrics.ssim(a, b),
            "log_psnr": metrics.log_psnr(pred, ref)}


def render_views(model, manifest, width=None, threads=None, render_cfg=None):
    """Render the model at every view of ``manifest``; yields (view, prediction, reference)."""
    if isinstance(manifest, (str, Path)):
        manifest = imgio.read_manifest(manifest)
    for v in manifest.views:
        ref = manifest_radiance(manifest, imgio.read_pfm(v.pano))
        w = width or ref.shape[1]
        if ref.shape[1] != w:
            ref = downsample(ref, ref.shape[1] // w)
        pred = render_panorama(model.field, model.normalized_pose(v.pose), w,
                               render_cfg or model.config.render_config(), threads)
        yield v, pred.astype(np.float64), ref


def eval_heldout(model, test_manifest, transport=None, metric_cfg=None, dataset="synth",
                 width=None, threads=None, render_cfg=None, transform=None, figures=None):
    """Metric rows for every test view, plus a final ``mean`` row when any.

    ``transform`` post-processes each rendered panorama (used to uplift LDR
    renders); ``figures`` names a directory for comparison images.
    """
    if isinstance(model, (str, Path)):
        model = load_model(model)
    rows = []
    for v, pred, ref in render_views(model, test_manifest, width, threads, render_cfg):
        if transform is not None:
            pred = np.asarray(transform(pred), np.float64)
        rows.append({"dataset": dataset, "view": v.pose.frame_id,
                     **score(pred, ref, transport, metric_cfg)})
        if figures is not None:
            from .plotting import comparison_figure
            comparison_figure(pred, ref, Path(figures) / f"{dataset}_{v.pose.frame_id}.png")
    if rows:
        mean = {k: float(np.mean([r[k] for r in rows])) for k in EVAL_FIELDS[2:]}
        rows.append({"dataset": dataset, "view": "mean", **mean})
    return rows


def write_table(rows, stream):
    w = csv.DictWriter(stream, EVAL_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (f"{r[k]:.6g}" if isinstance(r[k], float) else r[k]) for k in EVAL_FIELDS})
