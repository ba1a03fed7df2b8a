"""Command-line entry points: serve a model split over stdio, or featurize images.

``serve`` speaks the newline-JSON oracle protocol on stdin/stdout so a
saliency engine can score feature maps against a torch model.  ``featurize``
precomputes the feature maps the engine will perturb, one ``<stem>.npy`` per
image.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from .models import resolve_model
from .serve import serve
from .splitmodel import SplitRunner


def _add_runner_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--model", required=True,
                        help="builtin name, module:callable, checkpoint path, "
                             "or torchvision constructor")
    parser.add_argument("--split", required=True,
                        help="named submodule whose activation is the feature map")
    parser.add_argument("--inject", choices=("output", "input"), default="output",
                        help="replace the split layer's output (default) or its input")
    parser.add_argument("--input-shape", default="3,224,224", metavar="C,H,W",
                        help="model input shape (default 3,224,224)")
    parser.add_argument("--normalize", choices=("none", "imagenet"), default="none",
                        help="per-channel normalization applied to image-level inputs")


def _build_runner(args: argparse.Namespace) -> SplitRunner:
    try:
        shape = tuple(int(d) for d in args.input_shape.split(","))
    except ValueError:
        raise ValueError(f"--input-shape wants C,H,W integers, got {args.input_shape!r}")
    if len(shape) != 3:
        raise ValueError(f"--input-shape wants three dimensions, got {args.input_shape!r}")
    model = resolve_model(args.model)
    return SplitRunner(model, args.split, inject=args.inject,
                       input_shape=shape, normalize=args.normalize)


def _load_image(path: Path, input_shape) -> np.ndarray:
    channels, height, width = input_shape
    if channels != 3:
        raise ValueError(f"featurize expects a 3-channel model, got {channels}")
    with Image.open(path) as img:
        rgb = img.convert("RGB")
        if rgb.size != (width, height):
            rgb = rgb.resize((width, height), Image.BILINEAR)
        pixels = np.asarray(rgb, dtype=np.float64) / 255.0
    return pixels.transpose(2, 0, 1)


def cmd_serve(args: argparse.Namespace) -> int:
    return serve(_build_runner(args))


def cmd_featurize(args: argparse.Namespace) -> int:
    runner = _build_runner(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for image_path in args.images:
        path = Path(image_path)
        feature_map = runner.featurize(_load_image(path, runner.input_shape))
        np.save(out_dir / f"{path.stem}.npy", feature_map)
        print(f"{path} -> {out_dir / (path.stem + '.npy')}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="shapcam-adapter",
        description="Serve a torch model split as a feature-map scoring oracle.")
    sub = parser.add_subparsers(dest="command", required=True)

    serve_p = sub.add_parser("serve", help="speak the scoring protocol on stdin/stdout")
    _add_runner_flags(serve_p)
    serve_p.set_defaults(func=cmd_serve)

    feat_p = sub.add_parser("featurize", help="write <stem>.npy feature maps for images")
    _add_runner_flags(feat_p)
    feat_p.add_argument("--out-dir", required=True, help="directory for .npy outputs")
    feat_p.add_argument("images", nargs="+", help="image files to featurize")
    feat_p.set_defaults(func=cmd_featurize)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
