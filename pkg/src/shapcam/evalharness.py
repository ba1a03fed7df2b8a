"""Quantitative saliency evaluation: recognition faithfulness, insertion and
deletion curves, the energy-based pointing game, and the distillation loss
arithmetic.

All metrics operate on saliency at input-image resolution; grids produced at
feature-map resolution are bilinearly upsampled first. Saliency ranking ties
are always broken by row-major pixel index so results are reproducible across
implementations.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .baselines import image_scorer
from .errors import ShapeError, UndefinedResultError
from .shapley import SaliencyMap
from .tensor import Tensor, bilinear_resize

__all__ = [
    "Curve",
    "BBox",
    "Annotation",
    "MethodResult",
    "EvalRecord",
    "CURVE_POINTS",
    "upsample_saliency",
    "masked_input",
    "average_drop",
    "average_increase",
    "deletion_curve",
    "insertion_curve",
    "pointing_proportion",
    "student_loss",
    "read_annotations",
    "evaluate_image",
    "build_report",
    "report_to_csv",
    "TRANSCRIBED_REFERENCE",
    "REPORT_SCHEMA_VERSION",
]

# 0%, 1%, ..., 100% of pixels
CURVE_POINTS = 101


@dataclass(frozen=True)
class Curve:
    """A 101-point probability curve over the kept/removed pixel fraction."""

    points: np.ndarray
    auc: float

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.shape != (CURVE_POINTS,):
            raise ShapeError(f"curve must have {CURVE_POINTS} points, got {pts.shape}")
        pts = pts.copy()
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in pixel coordinates, half-open: [x0,x1) x [y0,y1)."""

    label: int
    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        if not (0 <= self.x0 < self.x1 and 0 <= self.y0 < self.y1):
            raise ShapeError(
                f"bbox needs 0 <= x0 < x1 and 0 <= y0 < y1, got "
                f"({self.x0},{self.y0},{self.x1},{self.y1})"
            )

    def scaled(self, sx: float, sy: float) -> "BBox":
        """Rescale to a resized image; the box never collapses to zero area."""
        x0 = int(np.floor(self.x0 * sx))
        y0 = int(np.floor(self.y0 * sy))
        x1 = max(x0 + 1, int(np.ceil(self.x1 * sx)))
        y1 = max(y0 + 1, int(np.ceil(self.y1 * sy)))
        return BBox(self.label, x0, y0, x1, y1)


@dataclass(frozen=True)
class Annotation:
    image: str
    target_class: int
    bbox: BBox | None = None


@dataclass
class MethodResult:
    """Per-image metrics for one saliency method; None = not computed."""

    base_prob: float | None = None
    masked_prob: float | None = None
    drop_pct: float | None = None
    increase_flag: bool | None = None
    deletion: Curve | None = None
    insertion: Curve | None = None
    proportion: float | None = None
    exclusions: tuple[str, ...] = ()


@dataclass
class EvalRecord:
    image: str
    target_class: int
    methods: dict[str, MethodResult] = field(default_factory=dict)


def _grid_of(saliency) -> np.ndarray:
    if isinstance(saliency, SaliencyMap):
        return saliency.grid
    grid = np.asarray(saliency, dtype=np.float64)
    if grid.ndim != 2:
        raise ShapeError(f"saliency must be 2-D, got shape {grid.shape}")
    return grid


def upsample_saliency(saliency: SaliencyMap, height: int, width: int) -> SaliencyMap:
    """Bilinearly resize a saliency grid to image resolution."""
    if saliency.shape == (height, width):
        return saliency
    up = bilinear_resize(Tensor.from_array(saliency.grid[None, :, :]), height, width)
    return replace(saliency, grid=up.array[0])


def _descending_pixel_order(grid: np.ndarray) -> np.ndarray:
    # stable sort on the negated values = ties broken by row-major index
    return np.argsort(-grid.reshape(-1), kind="stable")


def masked_input(image: Tensor, saliency, keep_fraction: float) -> Tensor:
    """Keep the top keep_fraction most-salient pixels, zero the rest.

    The binary mask is shared by all image channels.
    """
    if not 0.0 < keep_fraction <= 1.0:
        raise ValueError(f"keep_fraction must be in (0, 1], got {keep_fraction}")
    grid = _grid_of(saliency)
    if image.ndim != 3 or grid.shape != image.shape[1:]:
        raise ShapeError(
            f"saliency {grid.shape} does not match image spatial dims {image.shape[1:]}"
        )
    total = grid.size
    count = int(round(keep_fraction * total))
    mask = np.zeros(total)
    mask[_descending_pixel_order(grid)[:count]] = 1.0
    return Tensor.from_array(image.array * mask.reshape(grid.shape)[None, :, :])


def average_drop(pairs) -> float:
    """Mean percentage confidence lost under masking: sum max(0,Y-O)/Y / N * 100.

    Pairs with Y <= 0 are excluded (the ratio is undefined); callers that
    need the exclusion count compare len(pairs) with usable pairs.
    """
    drops = [100.0 * max(0.0, y - o) / y for y, o in pairs if y > 0.0]
    if not drops:
        raise UndefinedResultError("average drop needs at least one pair with positive base confidence")
    return float(np.mean(drops))


def average_increase(pairs) -> float:
    """Percentage of images whose confidence strictly rose under masking."""
    pairs = list(pairs)
    if not pairs:
        raise UndefinedResultError("average increase needs at least one pair")
    return float(100.0 * np.mean([1.0 if o > y else 0.0 for y, o in pairs]))


def _pixel_curve(score, image: Tensor, saliency, deletion: bool) -> Curve:
    grid = _grid_of(saliency)
    if grid.shape != image.shape[1:]:
        raise ShapeError(
            f"saliency {grid.shape} does not match image spatial dims {image.shape[1:]}"
        )
    order = _descending_pixel_order(grid)
    total = grid.size
    flat_image = image.array.reshape(image.shape[0], total)

    points = np.empty(CURVE_POINTS)
    for t in range(CURVE_POINTS):
        count = int(round(t / 100.0 * total))
        mask = np.ones(total) if deletion else np.zeros(total)
        mask[order[:count]] = 0.0 if deletion else 1.0
        masked = Tensor.from_array((flat_image * mask).reshape(image.shape))
        points[t] = score(masked)
    auc = float(np.trapezoid(points, dx=0.01))
    return Curve(points=points, auc=auc)


def deletion_curve(model, image: Tensor, saliency, target_class: int) -> Curve:
    """Probability as the top t% most-salient pixels are zeroed, t = 0..100."""
    return _pixel_curve(image_scorer(model, target_class), image, saliency, deletion=True)


def insertion_curve(model, image: Tensor, saliency, target_class: int) -> Curve:
    """Probability as pixels are restored into a zero image in saliency order."""
    return _pixel_curve(image_scorer(model, target_class), image, saliency, deletion=False)


def pointing_proportion(saliency, bbox: BBox) -> float:
    """Fraction of rectified saliency energy inside the bounding box."""
    grid = np.maximum(_grid_of(saliency), 0.0)
    h, w = grid.shape
    if bbox.x1 > w or bbox.y1 > h:
        raise ShapeError(f"bbox ({bbox.x0},{bbox.y0},{bbox.x1},{bbox.y1}) exceeds grid {h}x{w}")
    total = float(grid.sum())
    if total == 0.0:
        raise UndefinedResultError("rectified saliency is identically zero")
    inside = float(grid[bbox.y0 : bbox.y1, bbox.x0 : bbox.x1].sum())
    return inside / total


def student_loss(ce_loss: float, student_map, teacher_map, alpha: float) -> float:
    """Cross-entropy plus alpha times the squared L2 gap between explanations."""
    if alpha < 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    s = _grid_of(student_map)
    t = _grid_of(teacher_map)
    if s.shape != t.shape:
        raise ShapeError(f"student map {s.shape} does not match teacher map {t.shape}")
    return float(ce_loss + alpha * ((s - t) ** 2).sum())


def read_annotations(path) -> tuple[list[Annotation], list[str]]:
    """Parse a JSON-lines annotation file.

    Each line: {"image": path, "class": int, "bbox": [x0,y0,x1,y1]} with bbox
    optional. Returns (annotations, errors); bad lines become error strings
    naming the line number and parsing continues.
    """
    annotations: list[Annotation] = []
    errors: list[str] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                target = int(obj["class"])
                bbox = None
                if obj.get("bbox") is not None:
                    x0, y0, x1, y1 = (int(v) for v in obj["bbox"])
                    bbox = BBox(target, x0, y0, x1, y1)
                annotations.append(Annotation(str(obj["image"]), target, bbox))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError, ShapeError) as exc:
                errors.append(f"line {lineno}: {exc}")
    return annotations, errors


ALL_METRICS = ("drop", "increase", "deletion", "insertion", "pointing")


def evaluate_image(
    model,
    image: Tensor,
    saliency: SaliencyMap,
    target_class: int,
    metrics=ALL_METRICS,
    keep_fraction: float = 0.5,
    bbox: BBox | None = None,
) -> MethodResult:
    """Run the requested metrics for one image/saliency pair."""
    unknown = set(metrics) - set(ALL_METRICS)
    if unknown:
        raise ValueError(f"unknown metrics {sorted(unknown)}; choose from {ALL_METRICS}")
    _, h, w = image.shape
    sal = upsample_saliency(saliency, h, w)
    result = MethodResult()
    exclusions: list[str] = []

    if "drop" in metrics or "increase" in metrics:
        score = image_scorer(model, target_class)
        y = score(image)
        o = score(masked_input(image, sal, keep_fraction))
        result.base_prob = y
        result.masked_prob = o
        if "increase" in metrics:
            result.increase_flag = o > y
        if "drop" in metrics:
            if y > 0.0:
                result.drop_pct = 100.0 * max(0.0, y - o) / y
            else:
                exclusions.append("drop:zero-confidence")
    if "deletion" in metrics:
        result.deletion = deletion_curve(model, image, sal, target_class)
    if "insertion" in metrics:
        result.insertion = insertion_curve(model, image, sal, target_class)
    if "pointing" in metrics:
        if bbox is None:
            exclusions.append("pointing:missing-bbox")
        else:
            try:
                result.proportion = pointing_proportion(sal, bbox)
            except UndefinedResultError:
                exclusions.append("pointing:zero-saliency")

    result.exclusions = tuple(exclusions)
    return result


# --- report assembly ----------------------------------------------------------

REPORT_SCHEMA_VERSION = 1

# Previously published full-scale results (VGG16/ResNet18-class models on
# ImageNet/VOC/CIFAR). Transcribed, never computed by this package; rendered
# into reports only when the caller explicitly asks for reference rows.
TRANSCRIBED_REFERENCE = {
    "source": "transcribed",
    "note": "published full-scale results for orientation; not computed by this package",
    "recognition_imagenet_vgg16": {
        "average_drop": {"mask": 63.5, "rise": 47.0, "gradcam": 47.8,
                         "gradcam++": 45.5, "scorecam": 31.5, "shapcam": 28.0},
        "average_increase": {"mask": 5.29, "rise": 14.0, "gradcam": 19.6,
                             "gradcam++": 18.9, "scorecam": 30.6, "shapcam": 31.8},
    },
    "recognition_voc2007_vgg16": {
        "average_drop": {"mask": 45.3, "rise": 31.3, "gradcam": 28.5,
                         "gradcam++": 19.5, "scorecam": 15.6, "shapcam": 13.2},
        "average_increase": {"mask": 10.7, "rise": 18.2, "gradcam": 21.4,
                             "gradcam++": 19.0, "scorecam": 28.9, "shapcam": 32.7},
    },
    "pointing_voc2007": {
        "vgg16": {"gradcam": 39.95, "gradcam++": 40.16, "scorecam": 40.10, "shapcam": 40.45},
        "resnet18": {"gradcam": 40.90, "gradcam++": 40.85, "scorecam": 40.76, "shapcam": 41.28},
    },
    "distillation_cifar10_test_error": {
        "without_kd": {"ce": 6.78, "gradcam": 6.86, "gradcam++": 6.74,
                       "scorecam": 6.75, "shapcam": 6.69},
        "with_kd": {"ce": 5.68, "gradcam": 5.80, "gradcam++": 5.56,
                    "scorecam": 5.42, "shapcam": 5.37},
    },
}


def _method_result_dict(result: MethodResult) -> dict:
    out: dict = {
        "base_prob": result.base_prob,
        "masked_prob": result.masked_prob,
        "drop_pct": result.drop_pct,
        "increase_flag": result.increase_flag,
        "proportion": result.proportion,
        "exclusions": list(result.exclusions),
    }
    for name, curve in (("deletion", result.deletion), ("insertion", result.insertion)):
        if curve is not None:
            out[f"{name}_curve"] = curve.points.tolist()
            out[f"{name}_auc"] = curve.auc
        else:
            out[f"{name}_curve"] = None
            out[f"{name}_auc"] = None
    return out


def _aggregate(records: list[EvalRecord], method: str) -> dict:
    results = [r.methods[method] for r in records if method in r.methods]
    exclusions: dict[str, int] = {}
    for r in results:
        for reason in r.exclusions:
            exclusions[reason] = exclusions.get(reason, 0) + 1

    def mean_of(values):
        values = [v for v in values if v is not None]
        return float(np.mean(values)) if values else None

    agg = {
        "images": len(results),
        "average_drop": mean_of([r.drop_pct for r in results]),
        "average_increase": (
            100.0 * np.mean([r.increase_flag for r in results if r.increase_flag is not None])
            if any(r.increase_flag is not None for r in results) else None
        ),
        "deletion_auc": mean_of([r.deletion.auc if r.deletion else None for r in results]),
        "insertion_auc": mean_of([r.insertion.auc if r.insertion else None for r in results]),
        "pointing_proportion": mean_of([r.proportion for r in results]),
        "exclusions": exclusions,
    }
    if agg["average_increase"] is not None:
        agg["average_increase"] = float(agg["average_increase"])
    return agg


def build_report(
    records: list[EvalRecord],
    config: dict,
    annotation_errors: list[str] | None = None,
    include_reference: bool = False,
) -> dict:
    """Assemble the aggregate + per-image evaluation report."""
    methods = sorted({name for rec in records for name in rec.methods})
    report = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "config": config,
        "annotation_errors": list(annotation_errors or []),
        "methods": {name: _aggregate(records, name) for name in methods},
        "images": [
            {
                "image": rec.image,
                "class": rec.target_class,
                "methods": {name: _method_result_dict(res) for name, res in rec.methods.items()},
            }
            for rec in records
        ],
    }
    if include_reference:
        report["reference"] = TRANSCRIBED_REFERENCE
    return report


def report_to_csv(report: dict) -> str:
    """Aggregate rows as CSV (LF line endings, full-precision floats)."""
    columns = [
        "method", "images", "average_drop", "average_increase",
        "deletion_auc", "insertion_auc", "pointing_proportion", "excluded",
    ]
    lines = [",".join(columns)]
    for name in sorted(report["methods"]):
        agg = report["methods"][name]
        cells = [
            name,
            str(agg["images"]),
            *("" if agg[k] is None else repr(agg[k]) for k in
              ("average_drop", "average_increase", "deletion_auc",
               "insertion_auc", "pointing_proportion")),
            str(sum(agg["exclusions"].values())),
        ]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"
