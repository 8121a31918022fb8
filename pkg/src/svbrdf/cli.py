"""Command-line entry point for the capture pipeline.

One executable, one subcommand per pipeline stage::

    svbrdf generate-dataset --out data --materials 10
    svbrdf render   --material data/materials/m0000 --out img.pfm \
                    --light 0.1,0.2,0.5 --view 0,0,0.5
    svbrdf expose   --in img.pfm --out img.png
    svbrdf fit      --input img.pfm --out fitted/
    svbrdf train    --dataset data --out runs/base
    svbrdf eval     --dataset data --checkpoint runs/base/generator.ckpt --out report/
    svbrdf predict  --input photo.png --checkpoint runs/base/generator.ckpt --out maps/

Exit codes: 0 on success, 1 on a usage error (bad flags), 2 on a runtime
failure (missing files, malformed inputs).  Every failure prints exactly one
``svbrdf: error: <kind>: <detail>`` line to stderr.  All commands accept
``--seed`` and never modify their input files.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .datagen import build_dataset, DatasetManifest
from .exposure import auto_expose
from .imageio import (load_material, read_pfm, read_png,
                      save_material, write_pfm, write_png)
from .maps import SvbrdfMaps
from .networks import build_generator, load_network
from .render import PointLight, SceneConfig, render_point_light
from .training import (TrainConfig, evaluate, fit_inverse, predict_maps,
                       run_ablation, train)
from . import autodiff as ad

BASE_WIDTH = 64  # generator stem width at width_scale 1; used to recover the
                 # scale of a checkpoint from its first conv weight shape

HDR_SUFFIXES = {".pfm", ".hdr"}


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems via exception, not exit(2)."""

    def error(self, message):
        raise _UsageError(message)


def _vec3(text):
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected x,y,z, got {text!r}")
    try:
        return tuple(float(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"non-numeric component in {text!r}")


def build_parser() -> _Parser:
    parser = _Parser(prog="svbrdf", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    def cmd(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--seed", type=int, default=0, help="rng seed (default 0)")
        return p

    p = cmd("generate-dataset", "synthesize materials and rendered inputs")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--materials", type=int, required=True, help="number of materials")
    p.add_argument("--resolution", type=int, default=512, help="sample resolution")
    p.add_argument("--source-resolution", type=int, default=None,
                   help="synthesis resolution before augmentation (default 2x)")
    p.add_argument("--env-dir", default=None, help="directory of .pfm environment maps")
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads (also SVBRDF_THREADS)")

    p = cmd("render", "render a material directory under a point light")
    p.add_argument("--material", required=True, help="directory with the four maps")
    p.add_argument("--out", required=True, help="output .pfm radiance image")
    p.add_argument("--light", type=_vec3, required=True, help="light position x,y,z")
    p.add_argument("--view", type=_vec3, required=True, help="camera position x,y,z")

    p = cmd("expose", "auto-expose an HDR radiance image to an 8-bit linear PNG")
    p.add_argument("--in", dest="input", required=True, help="input .pfm image")
    p.add_argument("--out", required=True, help="output .png image")

    p = cmd("fit", "fit per-pixel maps to one flash photograph by optimization")
    p.add_argument("--input", required=True, help="flash radiance (.pfm) or LDR-linear .png")
    p.add_argument("--out", required=True, help="output material directory")
    p.add_argument("--steps", type=int, default=500, help="optimizer steps")
    p.add_argument("--lr", type=float, default=1e-2, help="optimizer step size")
    p.add_argument("--gt-material", default=None,
                   help="known ground-truth maps: adds the multi-view rendering "
                        "loss (validation harness)")
    p.add_argument("--views", type=int, default=10, help="views for --gt-material")
    p.add_argument("--float-maps", action="store_true", help="also write .pfm maps")

    p = cmd("train", "train the estimation networks on a generated dataset")
    p.add_argument("--dataset", required=True, help="dataset directory (with manifest.jsonl)")
    p.add_argument("--out", required=True, help="run directory for checkpoints and loss CSV")
    p.add_argument("--config", default=None, help="key=value config file (flags override)")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--steps-per-epoch", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--lr", dest="lr0", type=float, default=None)
    p.add_argument("--width-scale", type=float, default=None)
    p.add_argument("--resolution", type=int, default=None)
    p.add_argument("--render-views", dest="n_render_views", type=int, default=None)
    p.add_argument("--no-render-loss", dest="enable_r", action="store_false", default=None)
    p.add_argument("--no-param-loss", dest="enable_p", action="store_false", default=None)
    p.add_argument("--no-adversarial", dest="enable_a", action="store_false", default=None)
    p.add_argument("--no-feature-matching", dest="enable_f", action="store_false", default=None)
    p.add_argument("--ablation", action="store_true",
                   help="run the full ablation grid instead of a single training")

    p = cmd("eval", "evaluate a generator checkpoint on the held-out split")
    p.add_argument("--dataset", required=True, help="dataset directory")
    p.add_argument("--checkpoint", required=True, help="generator .ckpt file")
    p.add_argument("--out", required=True, help="output directory for eval.json")
    p.add_argument("--views", type=int, default=10, help="rendering-loss views")
    p.add_argument("--max-samples", type=int, default=None, help="cap test samples")

    p = cmd("predict", "estimate the four maps from one photograph")
    p.add_argument("--input", required=True, help="input photo (.png LDR-linear, or .pfm/.hdr)")
    p.add_argument("--checkpoint", required=True, help="generator .ckpt file")
    p.add_argument("--out", required=True, help="output material directory")
    p.add_argument("--float-maps", action="store_true", help="also write .pfm maps")

    return parser


# ---------------------------------------------------------------------------
# command bodies
# ---------------------------------------------------------------------------

def _load_generator(ckpt):
    """Build a generator matching a checkpoint's width and load its weights."""
    stored = ad.load_checkpoint(ckpt)
    if "stem.w" not in stored:
        raise ValueError(f"{ckpt}: not a generator checkpoint (no stem.w)")
    width_scale = stored["stem.w"].shape[0] / BASE_WIDTH
    generator = build_generator(width_scale=width_scale)
    load_network(ckpt, generator)
    return generator


def _read_photo(path):
    """Read a photograph as a linear LDR array in [0, 1].

    HDR inputs (.pfm/.hdr) are auto-exposed; PNGs are assumed to already be
    LDR-linear and are only rescaled to [0, 1].
    """
    p = Path(path)
    if p.suffix.lower() in HDR_SUFFIXES:
        img = auto_expose(read_pfm(p))
    else:
        img = read_png(p, encoding="linear")
    if img.ndim == 3 and img.shape[2] == 1:
        img = np.repeat(img, 3, axis=2)
    return img


def _gray_init(resolution):
    h, w = resolution
    normal = np.zeros((h, w, 3), dtype=np.float32)
    normal[..., 2] = 1.0
    return SvbrdfMaps.sanitized(
        base_color=np.full((h, w, 3), 0.5, dtype=np.float32),
        normal=normal,
        roughness=np.full((h, w, 1), 0.5, dtype=np.float32),
        metallic=np.zeros((h, w, 1), dtype=np.float32),
    )


def _cmd_generate_dataset(args):
    manifest = build_dataset(
        args.materials, args.out, seed=args.seed, resolution=args.resolution,
        source_resolution=args.source_resolution, env_dir=args.env_dir,
        threads=args.threads)
    n_train = len(manifest.split_records("train"))
    n_test = len(manifest.split_records("test"))
    print(f"{args.out}: {args.materials} materials, "
          f"{n_train} train / {n_test} test inputs")
    return 0


def _cmd_render(args):
    maps = load_material(args.material)
    cfg = SceneConfig()
    color = np.asarray(cfg.flash_color, dtype=np.float64) * cfg.flash_intensity
    light = PointLight(np.asarray(args.light), color)
    img = render_point_light(maps, light, np.asarray(args.view), cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_pfm(out, img.astype(np.float32))
    print(f"{out}: rendered {img.shape[1]}x{img.shape[0]}")
    return 0


def _cmd_expose(args):
    img = read_pfm(args.input)
    exposed = auto_expose(img)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_png(out, exposed, encoding="linear")
    print(f"{out}: exposed {exposed.shape[1]}x{exposed.shape[0]}")
    return 0


def _cmd_fit(args):
    photo = Path(args.input)
    if photo.suffix.lower() in HDR_SUFFIXES:
        observed = read_pfm(photo)
    else:
        # LDR-linear PNG: values are already in [0, 1]; treat them as (clipped)
        # radiance under the canonical flash scene
        observed = read_png(photo, encoding="linear")
    gt_maps = load_material(args.gt_material) if args.gt_material else None
    init = _gray_init(observed.shape[:2])
    fitted, history = fit_inverse(observed, init, steps=args.steps, lr=args.lr,
                                  gt_maps=gt_maps, n_views=args.views,
                                  seed=args.seed)
    out = Path(args.out)
    save_material(out, fitted, float_maps=args.float_maps)
    (out / "fit_history.json").write_text(json.dumps(
        {"steps": len(history), "loss_first": history[0], "loss_last": history[-1]},
        sort_keys=True) + "\n")
    print(f"{out}: fit {len(history)} steps, "
          f"loss {history[0]:.6g} -> {history[-1]:.6g}")
    return 0


def _train_config(args):
    overrides = dict(
        epochs=args.epochs, steps_per_epoch=args.steps_per_epoch,
        batch_size=args.batch_size, lr0=args.lr0, width_scale=args.width_scale,
        resolution=args.resolution, n_render_views=args.n_render_views,
        enable_r=args.enable_r, enable_p=args.enable_p,
        enable_a=args.enable_a, enable_f=args.enable_f, seed=args.seed)
    if args.config is not None:
        return TrainConfig.from_file(args.config, **overrides)
    return TrainConfig(**{k: v for k, v in overrides.items() if v is not None})


def _cmd_train(args):
    cfg = _train_config(args)
    root = Path(args.dataset)
    manifest = DatasetManifest.load(root / "manifest.jsonl")
    if args.ablation:
        report = run_ablation(cfg, manifest, root, args.out)
        print(report.table())
    else:
        result = train(cfg, manifest, root, args.out)
        last = result.reports[-1]
        print(f"{args.out}: trained {len(result.reports)} steps, "
              f"final total_g {last.total_g:.6g}")
    return 0


def _cmd_eval(args):
    root = Path(args.dataset)
    manifest = DatasetManifest.load(root / "manifest.jsonl")
    generator = _load_generator(args.checkpoint)
    report = evaluate(generator, manifest, root, seed=args.seed,
                      n_views=args.views, max_samples=args.max_samples)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "eval.json").write_text(report.to_json() + "\n")
    print(f"{out / 'eval.json'}: {report.n_samples} samples, "
          f"basecolor RMSE {report.native['basecolor']:.4f}")
    return 0


def _cmd_predict(args):
    image = _read_photo(args.input)
    generator = _load_generator(args.checkpoint)
    maps = predict_maps(generator, image)
    save_material(args.out, maps, float_maps=args.float_maps)
    print(f"{args.out}: wrote basecolor/normal/roughness/metallic "
          f"at {maps.resolution[1]}x{maps.resolution[0]}")
    return 0


_COMMANDS = {
    "generate-dataset": _cmd_generate_dataset,
    "render": _cmd_render,
    "expose": _cmd_expose,
    "fit": _cmd_fit,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "predict": _cmd_predict,
}


def _fail(kind, detail):
    text = str(detail).replace("\n", "; ") or kind
    print(f"svbrdf: error: {kind}: {text}", file=sys.stderr)


def run(argv) -> int:
    """Execute one CLI invocation; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as err:
        _fail("usage", err)
        return 1
    except SystemExit as err:  # argparse --help / --version path
        return int(err.code or 0)
    if args.command is None:
        _fail("usage", "missing command (see --help)")
        return 1
    try:
        return _COMMANDS[args.command](args)
    except (OSError, ValueError, KeyError, FloatingPointError) as err:
        _fail(type(err).__name__, err)
        return 2


def main(argv=None) -> int:
    return run(sys.argv[1:] if argv is None else argv)


if __name__ == "__main__":
    sys.exit(main())
