"""Command line front end.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""
import argparse
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import imgio, parallel
from .errors import DataError, NumericError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

PIPELINES = {
    "panohdr": ("uplift", "train-field", "render", "eval"),
    "nerf-ldr2hdr": ("train-field", "render", "uplift", "eval"),
}


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def pipeline_order(mode):
    """Steps of a pipeline mode in execution order."""
    if mode not in PIPELINES:
        raise UsageError(f"unknown pipeline mode {mode!r}")
    return list(PIPELINES[mode])


# ------------------------------------------------------------ helpers

def _manifest_path(path, default="manifest"):
    path = Path(path)
    if path.is_dir():
        path = path / default
    if not path.exists():
        raise DataError(f"missing manifest {path}")
    return path


def _parse_pose(text):
    parts = text.split()
    if len(parts) == 7:
        parts = ["pose"] + parts
    return imgio.parse_pose(" ".join(parts), "--pose")


def _open_out(path):
    return nullcontext(sys.stdout) if path in (None, "-") else open(path, "w")


def _curve(gamma):
    from .hdr import ResponseCurve
    return ResponseCurve(gamma)


def _load_uplift(spec):
    from .hdr import load_model
    if str(spec) != "parametric" and not Path(spec).exists():
        raise DataError(f"missing model {spec}")
    return load_model(spec)


def uplift_manifest(model, manifest, out_dir):
    """Uplift every LDR view of ``manifest`` into an HDR manifest under ``out_dir``."""
    from .hdr import uplift
    src = imgio.read_manifest(manifest)
    if src.kind != "ldr":
        raise DataError(f"{manifest}: expected an LDR manifest")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    curve = _curve(src.gamma)
    views = []
    for v in src.views:
        hdr = uplift(model, imgio.read_pfm(v.pano), curve) / 2.0 ** src.exposure
        path = out_dir / (Path(v.pano).stem + "_up.pfm")
        imgio.write_pfm(hdr, path)
        views.append(imgio.View(path, v.pose, v.mask))
    dst = imgio.DatasetManifest(None, views, src.scale, src.center, "hdr", 1.0, 0.0,
                                src.poses_path)
    path = out_dir / "manifest"
    imgio.write_manifest(dst, path)
    return path


def uplift_rendered(model, gamma, exposure):
    """Transform applied to rendered radiance in the reversed pipeline:
    re-expose, encode as LDR, uplift, and undo the exposure."""
    from .hdr import uplift
    curve = _curve(gamma)
    scale = 2.0 ** exposure

    def apply(e):
        ldr = curve.encode(np.asarray(e, np.float64) * scale)
        return uplift(model, ldr, curve).astype(np.float64) / scale

    return apply


def _transport(args):
    from . import prt
    if args.transport is None:
        return None
    path = Path(args.transport)
    if not path.exists() and not getattr(args, "build", False):
        raise DataError(f"missing transport file {path}")
    return prt.build_transport(None, args.render_res, args.env_width, args.threads, cache=path)


# ------------------------------------------------------------ subcommands

def cmd_synth(args):
    from . import synth
    scene = synth.read_scene(args.scene) if args.scene else synth.default_scene()
    ds = synth.make_dataset(scene, args.out, args.train, args.test, args.width, args.seed,
                            args.spp, args.bounces, args.gamma, args.exposure, args.mask_deg,
                            not args.no_fused, args.threads)
    print(f"train manifest {ds.manifest}")
    print(f"test manifest {ds.test}")
    print(f"exposure {ds.exposure}")


def cmd_fuse(args):
    from .hdr import fuse_exposures
    from .synth import ExposureStack
    if len(args.frames) != len(args.stops):
        raise UsageError("fuse: need one --stops value per frame")
    order = np.argsort(args.stops)
    frames = [imgio.read_pfm(args.frames[k]) for k in order]
    stack = ExposureStack(np.asarray(args.stops, np.float64)[order], frames, args.gamma)
    imgio.write_pfm(fuse_exposures(stack, _curve(args.gamma)), args.out)


def cmd_linearize(args):
    from .hdr import linearize
    lin = linearize(imgio.read_pfm(args.input), _curve(args.gamma)) / 2.0 ** args.exposure
    imgio.write_pfm(lin, args.out)


def cmd_uplift(args):
    from .hdr import uplift
    model = _load_uplift(args.model)
    if args.manifest:
        print(uplift_manifest(model, _manifest_path(args.manifest), args.out))
        return
    if not args.input:
        raise UsageError("uplift: give --in or --manifest")
    imgio.write_pfm(uplift(model, imgio.read_pfm(args.input), _curve(args.gamma)), args.out)


def cmd_train_ldr2hdr(args):
    import csv
    from .hdr import Ldr2HdrConfig, UpliftConfig, train_ldr2hdr
    from .train import load_views
    panos = [v.radiance for v in load_views(_manifest_path(args.data))]
    cfg = Ldr2HdrConfig(iterations=args.iterations, batch=args.batch, width=args.width,
                        lr=args.lr, gamma=args.gamma, render_loss=not args.no_render_loss,
                        seed=args.seed, model=UpliftConfig(seed=args.seed))
    tm = _transport(args) if cfg.render_loss else None
    with _open_out(args.log) as fh:
        writer = None

        def log(rec):
            nonlocal writer
            if writer is None:
                writer = csv.DictWriter(fh, list(rec), lineterminator="\n")
                writer.writeheader()
            writer.writerow(rec)

        model, _ = train_ldr2hdr(panos, cfg, tm, log)
    model.save(args.out, {"iterations": cfg.iterations})


def cmd_train_field(args):
    from . import plotting, train
    cfg = train.read_config(args.config) if args.config else train.TrainConfig()
    overrides = {k: getattr(args, k) for k in ("iterations", "seed") if getattr(args, k) is not None}
    if overrides:
        cfg = train.TrainConfig(**{**cfg.to_dict(), **overrides})
    with _open_out(args.log) as fh:
        sink = train.CsvReport(fh)
        try:
            train.train_field(_manifest_path(args.manifest), cfg, args.out, sink, args.resume)
        finally:
            if args.figures and sink.rows:
                plotting.loss_figure(sink.rows, Path(args.figures) / "loss.png")


def cmd_render(args):
    from .render import render_panorama
    from .train import load_model
    model = load_model(args.ckpt)
    cfg = model.config.render_config()
    pano = render_panorama(model.field, model.normalized_pose(_parse_pose(args.pose)),
                           args.width, cfg, args.threads, args.seed)
    imgio.write_pfm(pano, args.out)


def cmd_relight(args):
    from . import prt
    tm = _transport(args)
    env = prt.to_env(tm, imgio.read_pfm(args.env))
    imgio.write_pfm(prt.relight(tm, env).astype(np.float32), args.out)


def cmd_eval(args):
    from . import plotting, train
    model = train.load_model(args.ckpt)
    transform = None
    if args.uplift:
        transform = uplift_rendered(_load_uplift(args.uplift), args.gamma, args.exposure)
    rows = train.eval_heldout(model, _manifest_path(args.test), _transport(args),
                              dataset=args.dataset, width=args.width, threads=args.threads,
                              transform=transform, figures=args.figures)
    with _open_out(args.out) as fh:
        train.write_table(rows, fh)
    if args.figures and rows:
        plotting.metric_bars(rows[:-1], "pu_psnr", Path(args.figures) / "pu_psnr.png")


def cmd_gradcheck(args):
    from .net import gradcheck
    errs = gradcheck.check_primitives(args.seed)
    errs["mlp"] = gradcheck.check_mlp(args.depth, args.width, seed=args.seed)
    worst = 0.0
    for name, err in errs.items():
        print(f"{name:16s} {err:.3e}")
        worst = max(worst, err)
    if worst >= args.tol:
        raise NumericError(f"gradient check failed: max relative error {worst:.3e}")


def cmd_pipeline(args):
    """Run a whole pipeline on a synth dataset directory."""
    from . import train
    data = Path(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ldr_manifest = _manifest_path(data)
    src = imgio.read_manifest(ldr_manifest)
    model = _load_uplift(args.model)
    ckpt = out / "field.ckpt"
    steps = pipeline_order(args.mode)
    cfg = train.read_config(args.config) if args.config else train.TrainConfig()
    if args.seed is not None:
        cfg = train.TrainConfig(**{**cfg.to_dict(), "seed": args.seed})
    field_manifest = ldr_manifest
    transform = None
    for step in steps:
        if step == "uplift" and args.mode == "panohdr":
            field_manifest = uplift_manifest(model, ldr_manifest, out / "uplifted")
        elif step == "uplift":
            transform = uplift_rendered(model, src.gamma, src.exposure)
        elif step == "train-field":
            with open(out / "loss.csv", "w") as fh:
                train.train_field(field_manifest, cfg, ckpt, train.CsvReport(fh))
        elif step == "eval":
            rows = train.eval_heldout(train.load_model(ckpt), _manifest_path(data / "test"),
                                      _transport(args), dataset=args.mode,
                                      threads=args.threads, transform=transform,
                                      figures=out / "figures")
            with open(out / "eval.csv", "w") as fh:
                train.write_table(rows, fh)
        print(f"{step} done")


# ------------------------------------------------------------ parser

def _common(p, seed=True):
    p.add_argument("--threads", type=int, default=None,
                   help=f"worker threads (default ${parallel.ENV_THREADS} or 1)")
    if seed:
        p.add_argument("--seed", type=int, default=None)


def _transport_flags(p, required=False):
    p.add_argument("--transport", required=required, help="transport matrix file")
    p.add_argument("--build", action="store_true", help="build the transport if missing")
    p.add_argument("--render-res", type=int, default=64)
    p.add_argument("--env-width", type=int, default=32)


def build_parser():
    ap = Parser(prog="hdrfield", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", parser_class=Parser, required=True)

    p = sub.add_parser("synth", help="render a synthetic box-room dataset")
    p.add_argument("--scene")
    p.add_argument("--train", type=int, default=20)
    p.add_argument("--test", type=int, default=4)
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--spp", type=int, default=16)
    p.add_argument("--bounces", type=int, default=2)
    p.add_argument("--gamma", type=float, default=2.2)
    p.add_argument("--exposure", type=float, default=None, help="capture exposure in stops")
    p.add_argument("--mask-deg", type=float, default=0.0)
    p.add_argument("--no-fused", action="store_true")
    p.add_argument("--out", required=True)
    _common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fuse", help="fuse an exposure bracket into HDR")
    p.add_argument("--frames", nargs="+", required=True)
    p.add_argument("--stops", nargs="+", type=float, required=True)
    p.add_argument("--gamma", type=float, default=2.2)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("linearize", help="invert the response curve of an LDR panorama")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--gamma", type=float, default=2.2)
    p.add_argument("--exposure", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_linearize)

    p = sub.add_parser("uplift", help="LDR to HDR with a model or 'parametric'")
    p.add_argument("--model", default="parametric")
    p.add_argument("--gamma", type=float, default=2.2)
    p.add_argument("--in", dest="input")
    p.add_argument("--manifest", help="uplift a whole LDR manifest into --out (a directory)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_uplift)

    p = sub.add_parser("train-ldr2hdr", help="train the learned uplift model")
    p.add_argument("--data", required=True, help="HDR manifest of training panoramas")
    p.add_argument("--iterations", type=int, default=1000)
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--gamma", type=float, default=2.2)
    p.add_argument("--no-render-loss", action="store_true")
    p.add_argument("--log")
    p.add_argument("--out", required=True)
    _transport_flags(p)
    _common(p)
    p.set_defaults(func=cmd_train_ldr2hdr)

    p = sub.add_parser("train-field", help="train a radiance field")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config")
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--resume", action="store_true")
    p.add_argument("--log", help="LossReport CSV (default stdout)")
    p.add_argument("--figures")
    p.add_argument("--out", required=True)
    _common(p)
    p.set_defaults(func=cmd_train_field)

    p = sub.add_parser("render", help="render a panorama from a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--pose", required=True, help="'tx ty tz qw qx qy qz'")
    p.add_argument("--width", type=int, default=256)
    p.add_argument("--out", required=True)
    _common(p)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("relight", help="relight the probe scene with an environment map")
    p.add_argument("--env", required=True)
    p.add_argument("--out", required=True)
    _transport_flags(p, required=True)
    _common(p, seed=False)
    p.set_defaults(func=cmd_relight)

    p = sub.add_parser("eval", help="metrics of a checkpoint at held-out poses")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--dataset", default="synth")
    p.add_argument("--width", type=int, default=None)
    p.add_argument("--uplift", help="uplift rendered panoramas with this model")
    p.add_argument("--gamma", type=float, default=2.2)
    p.add_argument("--exposure", type=float, default=0.0)
    p.add_argument("--figures")
    p.add_argument("--out", help="CSV path (default stdout)")
    _transport_flags(p)
    _common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of the autodiff")
    p.add_argument("--depth", type=int, default=8)
    p.add_argument("--width", type=int, default=256)
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("pipeline", help="uplift/train/render/eval on a synth dataset")
    p.add_argument("--mode", choices=sorted(PIPELINES), default="panohdr")
    p.add_argument("--data", required=True, help="synth dataset directory")
    p.add_argument("--model", default="parametric")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    _transport_flags(p)
    _common(p)
    p.set_defaults(func=cmd_pipeline)
    return ap


def run(argv=None):
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "threads", None) is None and hasattr(args, "threads"):
            args.threads = parallel.default_threads()
        if getattr(args, "seed", 0) is None and args.command in ("synth", "train-ldr2hdr"):
            args.seed = 0
        args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
