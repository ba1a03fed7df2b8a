"""Command-line entry point: gradient-free saliency maps and their evaluation.

Subcommands
-----------
explain
    One image (or feature map) -> saliency grid CSV + raw ``.npy``, overlay
    image, and a JSON run manifest.
evaluate
    Annotation file -> aggregate faithfulness/localization report (JSON + CSV).
compare
    One image, several methods -> side-by-side report plus per-method
    artifacts and merged deletion/insertion curve files.
game-debug
    Introspection dump: empty/full worths, exact and sampled values,
    standard errors, efficiency residuals.

Conventions
-----------
* Exit codes: 0 success, 2 usage/validation, 3 oracle failure, 4 I/O.
  Failures print one machine-readable JSON line to stderr:
  ``{"error": {"exit_code": N, "type": "...", "message": "..."}}``.
* All randomness flows from ``--seed``; when absent a seed is drawn and
  recorded in the manifest. Re-running with ``--from-manifest`` reproduces
  every numeric artifact byte for byte (timings live only in the manifest).
* ``--workers`` defaults to the ``SHAPCAM_WORKERS`` environment variable.
* External runs speak the newline-delimited JSON wire protocol to a child
  process. ``--oracle-cmd`` serves the feature-map game; image-space metrics
  additionally need ``--image-oracle-cmd``, the same protocol served with an
  input-level split so that "maps" are whole input images.
"""

from __future__ import annotations

import argparse
import json
import os
import secrets
import shlex
import sys
import time
from pathlib import Path

import numpy as np

from .baselines import image_scorer, random_saliency, rise, score_cam
from .errors import ImageError, ModelLoadError, OracleError, ShapcamError, ShapeError
from .evalharness import (
    ALL_METRICS,
    BBox,
    EvalRecord,
    build_report,
    evaluate_image,
    read_annotations,
    report_to_csv,
)
from .imageio import load_image, render_curves, render_overlay
from .model import (
    TOYNET_SPEC,
    NetworkSplit,
    forward_head,
    forward_tail,
    full_forward,
    load_model,
    toynet,
)
from .shapley import SaliencyMap, exact_shapley, sample_shapley, shap_cam
from .tensor import Tensor, bilinear_resize
from .worth import Coalition, ExternalOracle, InProcessOracle, make_game, worth

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_ORACLE = 3
EXIT_IO = 4

MANIFEST_SCHEMA_VERSION = 1
METHODS = ("shapcam", "scorecam", "rise", "random")


class UsageError(ValueError):
    """Bad flags or flag combinations; maps to exit code 2."""


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of printing usage and exiting."""

    def error(self, message):
        raise UsageError(message)


# --- flag groups ----------------------------------------------------------------


def _add_model_flags(p):
    p.add_argument("--model", metavar="SPEC",
                   help="'toynet' for the bundled network, or a model-spec file")
    p.add_argument("--weights", metavar="FILE",
                   help="weight file (optional override for --model toynet)")
    p.add_argument("--oracle-cmd", metavar="CMD",
                   help="external feature-map oracle command line")
    p.add_argument("--oracle-timeout", type=float, default=120.0,
                   help="seconds to wait on external oracle responses")


def _add_sampling_flags(p):
    p.add_argument("--samples", type=int, default=10000,
                   help="permutations for the sampled estimator")
    p.add_argument("--seed", type=int, default=None,
                   help="64-bit RNG seed; drawn and recorded when absent")
    p.add_argument("--baseline", choices=("per-channel", "global"), default="per-channel")
    p.add_argument("--exact", action="store_true",
                   help="enumerate all coalitions instead of sampling (small grids)")
    p.add_argument("--workers", type=int, default=None,
                   help="parallel permutation workers (default: $SHAPCAM_WORKERS or 1)")


def _add_rise_flags(p):
    p.add_argument("--rise-masks", type=int, default=4000)
    p.add_argument("--rise-cells", type=int, default=7)
    p.add_argument("--rise-keep", type=float, default=0.5)


def build_parser() -> _Parser:
    parser = _Parser(prog="shapcam", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("explain", help="saliency artifacts for one image")
    p.add_argument("--image", metavar="FILE", help="input image (PPM or PNG)")
    p.add_argument("--feature-map", metavar="FILE",
                   help=".npy feature map to explain directly (skips the head)")
    p.add_argument("--class", dest="target_class", type=int, default=None,
                   help="target class (default: in-process top-1)")
    p.add_argument("--method", choices=METHODS, default="shapcam")
    _add_model_flags(p)
    _add_sampling_flags(p)
    _add_rise_flags(p)
    p.add_argument("--out-dir", metavar="DIR")
    p.add_argument("--from-manifest", metavar="FILE",
                   help="replay a recorded run (combine only with --out-dir)")

    p = sub.add_parser("evaluate", help="batch metrics over an annotation file")
    p.add_argument("--annotations", metavar="FILE")
    p.add_argument("--methods", default="shapcam",
                   help=f"comma-separated subset of {','.join(METHODS)}")
    p.add_argument("--metrics", default=",".join(ALL_METRICS),
                   help=f"comma-separated subset of {','.join(ALL_METRICS)}")
    p.add_argument("--keep-fraction", type=float, default=0.5)
    p.add_argument("--with-transcribed-reference", action="store_true",
                   help="include transcribed published full-scale rows in the report")
    p.add_argument("--image-oracle-cmd", metavar="CMD",
                   help="external image scorer (wire protocol with an input-level split)")
    p.add_argument("--feature-map-dir", metavar="DIR",
                   help="per-image .npy feature maps (<image stem>.npy) for external runs")
    _add_model_flags(p)
    _add_sampling_flags(p)
    _add_rise_flags(p)
    p.add_argument("--out-dir", metavar="DIR")
    p.add_argument("--from-manifest", metavar="FILE")

    p = sub.add_parser("compare", help="several methods side by side on one image")
    p.add_argument("--image", metavar="FILE")
    p.add_argument("--class", dest="target_class", type=int, default=None)
    p.add_argument("--methods", default=",".join(METHODS))
    p.add_argument("--metrics", default="drop,increase,deletion,insertion")
    p.add_argument("--keep-fraction", type=float, default=0.5)
    p.add_argument("--bbox", metavar="X0,Y0,X1,Y1",
                   help="ground-truth box, enables the pointing metric")
    _add_model_flags(p)
    _add_sampling_flags(p)
    _add_rise_flags(p)
    p.add_argument("--out-dir", metavar="DIR")
    p.add_argument("--from-manifest", metavar="FILE")

    p = sub.add_parser("game-debug", help="worth/value introspection dump")
    p.add_argument("--image", metavar="FILE")
    p.add_argument("--feature-map", metavar="FILE")
    p.add_argument("--class", dest="target_class", type=int, default=None)
    _add_model_flags(p)
    _add_sampling_flags(p)
    p.add_argument("--out", metavar="FILE", help="also write the dump here")

    return parser


# --- shared resolution helpers --------------------------------------------------


def _resolve_workers(args) -> int:
    if args.workers is not None:
        value = args.workers
    else:
        raw = os.environ.get("SHAPCAM_WORKERS", "1")
        try:
            value = int(raw)
        except ValueError:
            raise UsageError(f"SHAPCAM_WORKERS must be an integer, got {raw!r}")
    if value < 1:
        raise UsageError(f"workers must be >= 1, got {value}")
    return value


def _resolve_seed(args) -> int:
    if args.seed is None:
        return secrets.randbits(64)
    if not 0 <= args.seed < 2**64:
        raise UsageError(f"seed must be in [0, 2**64), got {args.seed}")
    return args.seed


def _record_seed(base_seed: int, index: int) -> int:
    """Deterministic per-record stream for multi-image runs."""
    return int(np.random.SeedSequence(entropy=(base_seed, index)).generate_state(1, np.uint64)[0])


def _load_net(args) -> NetworkSplit:
    if args.model == "toynet":
        if args.weights is None:
            return toynet()
        return load_model(TOYNET_SPEC, Path(args.weights).read_bytes())
    if args.weights is None:
        raise UsageError("a model-spec file needs --weights")
    return load_model(Path(args.model).read_text(), Path(args.weights).read_bytes())


def _open_engine(args):
    """Return (net, map_oracle): exactly one is None."""
    if args.oracle_cmd:
        if args.model or args.weights:
            raise UsageError("--oracle-cmd replaces --model/--weights; give one or the other")
        return None, ExternalOracle(shlex.split(args.oracle_cmd), timeout=args.oracle_timeout)
    if args.model is None:
        raise UsageError("missing --weights/--model without --oracle-cmd")
    return _load_net(args), None


def _fit_image(image: Tensor, shape) -> Tensor:
    c, h, w = shape
    if image.shape[0] != c:
        raise ShapeError(f"image has {image.shape[0]} channels, the model wants {c}")
    if image.shape[1:] != (h, w):
        image = bilinear_resize(image, h, w)
    return image


def _load_feature_map(path) -> Tensor:
    try:
        arr = np.load(path)
    except (OSError, ValueError) as exc:
        raise ImageError(f"could not read feature map {path}: {exc}")
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != 3:
        raise ShapeError(f"feature map must be CxHxW, got shape {arr.shape}")
    return Tensor.from_array(arr)


def _resolve_class(args, net, image) -> int:
    if args.target_class is not None:
        if args.target_class < 0:
            raise UsageError(f"class index must be non-negative, got {args.target_class}")
        return args.target_class
    if net is None or image is None:
        raise UsageError("--class is required when no in-process model scores the image")
    probs = full_forward(net, image).array
    return int(np.argmax(probs))


def _parse_list(raw: str, allowed, what: str) -> tuple[str, ...]:
    items = tuple(s.strip() for s in raw.split(",") if s.strip())
    if not items:
        raise UsageError(f"no {what} selected")
    unknown = [s for s in items if s not in allowed]
    if unknown:
        raise UsageError(f"unknown {what} {unknown}; choose from {list(allowed)}")
    return items


def _compute_saliency(method, net, map_oracle, image_oracle, image, feature_map,
                      target_class, args, seed, workers) -> SaliencyMap:
    """Dispatch one saliency method over whichever engine is available."""
    if method == "shapcam":
        if feature_map is not None:
            model = map_oracle if map_oracle is not None else InProcessOracle(net)
            subject = feature_map
        else:
            model, subject = net, image
        return shap_cam(model, subject, target_class, m=args.samples, seed=seed,
                        exact=args.exact, baseline=args.baseline, workers=workers)
    if method == "scorecam":
        if net is None:
            raise UsageError("scorecam needs an in-process model")
        if image is None:
            raise UsageError("scorecam needs --image")
        return score_cam(net, image, target_class)
    if method == "rise":
        scorer = net if net is not None else image_oracle
        if scorer is None:
            raise UsageError("rise needs an in-process model or --image-oracle-cmd")
        if image is None:
            raise UsageError("rise needs --image")
        return rise(scorer, image, target_class, num_masks=args.rise_masks,
                    cell_grid=args.rise_cells, keep_prob=args.rise_keep, seed=seed)
    if method == "random":
        if feature_map is not None:
            _, h, w = feature_map.shape
        elif net is not None:
            _, h, w = net.feature_shape
        else:
            _, h, w = image.shape
        return random_saliency(h, w, seed)
    raise UsageError(f"unknown method {method!r}")


# --- artifacts -------------------------------------------------------------------


def _grid_csv(grid: np.ndarray) -> str:
    return "\n".join(",".join(repr(v) for v in row) for row in grid.tolist()) + "\n"


def _prepare_out_dir(args) -> Path:
    if not args.out_dir:
        raise UsageError("--out-dir is required")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _flags_dict(args, names) -> dict:
    return {name: getattr(args, name) for name in names}


def _write_manifest(out_dir: Path, command: str, flags: dict, seed: int,
                    timings: dict, extra: dict | None = None) -> Path:
    doc = {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "command": command,
        "flags": flags,
        "seed": seed,
        "timings": timings,
    }
    doc.update(extra or {})
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(doc, indent=2) + "\n")
    return path


def _replay_args(args, expected_command: str):
    """Rebuild the flag namespace for a --from-manifest run."""
    try:
        doc = json.loads(Path(args.from_manifest).read_text())
    except OSError as exc:
        raise ImageError(f"could not read manifest: {exc}")
    except json.JSONDecodeError as exc:
        raise UsageError(f"manifest is not valid JSON: {exc}")
    if doc.get("schema_version") != MANIFEST_SCHEMA_VERSION:
        raise UsageError(f"manifest schema_version {doc.get('schema_version')!r} unsupported")
    if doc.get("command") != expected_command:
        raise UsageError(f"manifest records a {doc.get('command')!r} run, not {expected_command!r}")
    replayed = argparse.Namespace(**doc["flags"])
    replayed.command = expected_command
    replayed.from_manifest = None
    replayed.out_dir = args.out_dir  # the one flag a replay may change
    if replayed.seed is None:
        replayed.seed = doc["seed"]
    return replayed


def _saliency_artifacts(out_dir: Path, name: str, saliency: SaliencyMap, image) -> list[str]:
    written = []
    csv_path = out_dir / f"{name}.csv"
    csv_path.write_text(_grid_csv(saliency.grid))
    written.append(str(csv_path))
    npy_path = out_dir / f"{name}.npy"
    np.save(npy_path, saliency.grid)
    written.append(str(npy_path))
    if image is not None:
        overlay_path = out_dir / f"{name}_overlay.ppm"
        render_overlay(image, saliency, overlay_path)
        written.append(str(overlay_path))
    return written


# --- subcommands -----------------------------------------------------------------

EXPLAIN_FLAGS = (
    "image", "feature_map", "target_class", "method", "model", "weights",
    "oracle_cmd", "oracle_timeout", "samples", "seed", "baseline", "exact",
    "workers", "rise_masks", "rise_cells", "rise_keep",
)


def cmd_explain(args) -> int:
    if args.from_manifest:
        args = _replay_args(args, "explain")
    out_dir = _prepare_out_dir(args)
    t_start = time.perf_counter()
    seed = _resolve_seed(args)
    workers = _resolve_workers(args)

    net = map_oracle = None
    try:
        net, map_oracle = _open_engine(args)
        if args.image is None and args.feature_map is None:
            raise UsageError("explain needs --image or --feature-map")
        if map_oracle is not None and args.feature_map is None:
            raise UsageError("external explain needs --feature-map (the map the oracle scores)")

        image = load_image(args.image) if args.image else None
        if image is not None and net is not None:
            image = _fit_image(image, net.input_shape)
        feature_map = _load_feature_map(args.feature_map) if args.feature_map else None
        target_class = _resolve_class(args, net, image)
        t_loaded = time.perf_counter()

        saliency = _compute_saliency(
            args.method, net, map_oracle, None, image, feature_map,
            target_class, args, seed, workers,
        )
        t_saliency = time.perf_counter()
    finally:
        if map_oracle is not None:
            map_oracle.close()

    written = _saliency_artifacts(out_dir, "saliency", saliency, image)
    flags = _flags_dict(args, EXPLAIN_FLAGS)
    flags.update(seed=seed, workers=workers, target_class=target_class)
    manifest = _write_manifest(
        out_dir, "explain", flags, seed,
        timings={
            "load_s": t_loaded - t_start,
            "saliency_s": t_saliency - t_loaded,
            "total_s": time.perf_counter() - t_start,
        },
        extra={"mode": saliency.meta.get("mode", args.method)},
    )
    for path in written + [str(manifest)]:
        print(f"wrote {path}")
    return EXIT_OK


EVALUATE_FLAGS = (
    "annotations", "methods", "metrics", "keep_fraction", "with_transcribed_reference",
    "image_oracle_cmd", "feature_map_dir", "model", "weights", "oracle_cmd",
    "oracle_timeout", "samples", "seed", "baseline", "exact", "workers",
    "rise_masks", "rise_cells", "rise_keep",
)


def cmd_evaluate(args) -> int:
    if args.from_manifest:
        args = _replay_args(args, "evaluate")
    out_dir = _prepare_out_dir(args)
    t_start = time.perf_counter()
    seed = _resolve_seed(args)
    workers = _resolve_workers(args)
    methods = _parse_list(args.methods, METHODS, "methods")
    metrics = _parse_list(args.metrics, ALL_METRICS, "metrics")
    if args.annotations is None:
        raise UsageError("--annotations is required")

    annotations, annotation_errors = read_annotations(args.annotations)
    if not annotations:
        raise UsageError(f"no usable annotation records in {args.annotations}")

    net = map_oracle = image_oracle = None
    image_metrics = [m for m in metrics if m != "pointing"]
    try:
        net, map_oracle = _open_engine(args)
        if map_oracle is not None:
            if "shapcam" in methods and not args.feature_map_dir:
                raise UsageError("external shapcam runs need --feature-map-dir")
            if image_metrics or "rise" in methods:
                if not args.image_oracle_cmd:
                    raise UsageError(
                        f"metrics {image_metrics} score masked images; external runs "
                        "need --image-oracle-cmd (input-level split)")
                image_oracle = ExternalOracle(shlex.split(args.image_oracle_cmd),
                                              timeout=args.oracle_timeout)
        if "scorecam" in methods and net is None:
            raise UsageError("scorecam needs an in-process model")

        scorer = net if net is not None else image_oracle
        records = []
        t_loaded = time.perf_counter()
        for index, ann in enumerate(annotations):
            image = load_image(ann.image)
            if net is not None:
                image = _fit_image(image, net.input_shape)
            elif image_oracle is not None:
                image = _fit_image(image, image_oracle.map_shape)
            feature_map = None
            if map_oracle is not None and "shapcam" in methods:
                stem = Path(ann.image).stem
                feature_map = _load_feature_map(Path(args.feature_map_dir) / f"{stem}.npy")
            record_seed = _record_seed(seed, index)

            results = {}
            for method in methods:
                saliency = _compute_saliency(
                    method, net, map_oracle, image_oracle, image, feature_map,
                    ann.target_class, args, record_seed, workers,
                )
                results[method] = evaluate_image(
                    scorer, image, saliency, ann.target_class,
                    metrics=metrics, keep_fraction=args.keep_fraction, bbox=ann.bbox,
                )
            records.append(EvalRecord(image=ann.image, target_class=ann.target_class,
                                      methods=results))
        t_evaluated = time.perf_counter()
    finally:
        for handle in (map_oracle, image_oracle):
            if handle is not None:
                handle.close()

    flags = _flags_dict(args, EVALUATE_FLAGS)
    flags.update(seed=seed, workers=workers)
    report = build_report(
        records,
        config=flags,
        annotation_errors=annotation_errors,
        include_reference=args.with_transcribed_reference,
    )
    report_path = out_dir / "report.json"
    report_path.write_text(json.dumps(report, indent=2) + "\n")
    csv_path = out_dir / "report.csv"
    csv_path.write_text(report_to_csv(report))
    manifest = _write_manifest(
        out_dir, "evaluate", flags, seed,
        timings={
            "load_s": t_loaded - t_start,
            "evaluate_s": t_evaluated - t_loaded,
            "total_s": time.perf_counter() - t_start,
        },
    )
    for line in annotation_errors:
        print(f"annotation error: {line}", file=sys.stderr)
    for path in (report_path, csv_path, manifest):
        print(f"wrote {path}")
    return EXIT_OK


COMPARE_FLAGS = (
    "image", "target_class", "methods", "metrics", "keep_fraction", "bbox",
    "model", "weights", "oracle_cmd", "oracle_timeout", "samples", "seed",
    "baseline", "exact", "workers", "rise_masks", "rise_cells", "rise_keep",
)


def _parse_bbox(raw: str) -> BBox:
    parts = raw.split(",")
    if len(parts) != 4:
        raise UsageError(f"--bbox wants X0,Y0,X1,Y1, got {raw!r}")
    try:
        x0, y0, x1, y1 = (int(p) for p in parts)
    except ValueError:
        raise UsageError(f"--bbox wants integer pixel coordinates, got {raw!r}")
    return BBox(label=-1, x0=x0, y0=y0, x1=x1, y1=y1)


def cmd_compare(args) -> int:
    if args.from_manifest:
        args = _replay_args(args, "compare")
    out_dir = _prepare_out_dir(args)
    t_start = time.perf_counter()
    seed = _resolve_seed(args)
    workers = _resolve_workers(args)
    methods = _parse_list(args.methods, METHODS, "methods")
    metrics = _parse_list(args.metrics, ALL_METRICS, "metrics")
    bbox = _parse_bbox(args.bbox) if args.bbox else None
    if args.oracle_cmd:
        raise UsageError("compare runs in-process; use evaluate for external oracles")
    if args.image is None:
        raise UsageError("compare needs --image")

    net, _ = _open_engine(args)
    image = _fit_image(load_image(args.image), net.input_shape)
    target_class = _resolve_class(args, net, image)

    written = []
    results = {}
    saliencies = {}
    for method in methods:
        saliency = _compute_saliency(method, net, None, None, image, None,
                                     target_class, args, seed, workers)
        saliencies[method] = saliency
        results[method] = evaluate_image(
            net, image, saliency, target_class,
            metrics=metrics, keep_fraction=args.keep_fraction, bbox=bbox,
        )
        written += _saliency_artifacts(out_dir, f"saliency_{method}", saliency, image)
    t_evaluated = time.perf_counter()

    record = EvalRecord(image=args.image, target_class=target_class, methods=results)
    flags = _flags_dict(args, COMPARE_FLAGS)
    flags.update(seed=seed, workers=workers, target_class=target_class)
    report = build_report([record], config=flags)
    report_path = out_dir / "report.json"
    report_path.write_text(json.dumps(report, indent=2) + "\n")
    written.append(str(report_path))
    csv_path = out_dir / "report.csv"
    csv_path.write_text(report_to_csv(report))
    written.append(str(csv_path))

    for kind in ("deletion", "insertion"):
        if kind in metrics:
            curves = {m: getattr(results[m], kind).points for m in methods}
            written += render_curves(curves, out_dir / f"curves_{kind}.csv")

    manifest = _write_manifest(
        out_dir, "compare", flags, seed,
        timings={"evaluate_s": t_evaluated - t_start,
                 "total_s": time.perf_counter() - t_start},
    )
    for path in written + [str(manifest)]:
        print(f"wrote {path}")
    return EXIT_OK


def cmd_game_debug(args) -> int:
    seed = _resolve_seed(args)
    workers = _resolve_workers(args)
    net = map_oracle = None
    try:
        net, map_oracle = _open_engine(args)
        if args.feature_map:
            feature_map = _load_feature_map(args.feature_map)
        elif args.image:
            if net is None:
                raise UsageError("external game-debug needs --feature-map")
            feature_map = forward_head(net, _fit_image(load_image(args.image), net.input_shape))
        else:
            raise UsageError("game-debug needs --image or --feature-map")

        if args.target_class is None and net is not None:
            probs = forward_tail(net, feature_map).array
            target_class = int(np.argmax(probs))
        elif args.target_class is None:
            raise UsageError("--class is required with an external oracle")
        else:
            target_class = args.target_class

        oracle = map_oracle if map_oracle is not None else InProcessOracle(net)
        game = make_game(feature_map, target_class, oracle, baseline=args.baseline)
        empty = worth(game, Coalition.empty(game.n_players))
        full = worth(game, Coalition.full(game.n_players))

        dump = {
            "n_players": game.n_players,
            "target_class": target_class,
            "baseline": args.baseline,
            "worth_empty": empty,
            "worth_full": full,
        }
        if args.exact or game.n_players <= 16:
            values = exact_shapley(game)
            dump["exact_values"] = values.tolist()
            dump["efficiency_residual_exact"] = abs(float(values.sum()) - (full - empty))
        estimate = sample_shapley(game, args.samples, seed, workers)
        dump["sampled_values"] = estimate.values.tolist()
        dump["sampled_m"] = estimate.sample_count
        dump["sampled_seed"] = estimate.seed
        if estimate.sample_count >= 2:
            dump["standard_errors"] = estimate.standard_error().tolist()
        dump["efficiency_residual_sampled"] = abs(float(estimate.values.sum()) - (full - empty))
    finally:
        if map_oracle is not None:
            map_oracle.close()

    text = json.dumps(dump, indent=2)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n")
    return EXIT_OK


# --- entry point -----------------------------------------------------------------

_DISPATCH = {
    "explain": cmd_explain,
    "evaluate": cmd_evaluate,
    "compare": cmd_compare,
    "game-debug": cmd_game_debug,
}


def _emit_error(exit_code: int, exc: BaseException) -> int:
    payload = {"error": {
        "exit_code": exit_code,
        "type": type(exc).__name__,
        "message": str(exc),
    }}
    print(json.dumps(payload), file=sys.stderr)
    return exit_code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return _DISPATCH[args.command](args)
    except OracleError as exc:
        return _emit_error(EXIT_ORACLE, exc)
    except (ImageError, ModelLoadError) as exc:
        return _emit_error(EXIT_IO, exc)
    except (UsageError, ShapcamError, ValueError) as exc:
        return _emit_error(EXIT_USAGE, exc)
    except OSError as exc:
        return _emit_error(EXIT_IO, exc)


if __name__ == "__main__":
    sys.exit(main())
