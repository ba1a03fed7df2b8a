"""Faithfulness, curve, pointing, and distillation-loss metrics."""

import numpy as np
import pytest

from shapcam.errors import ShapeError, UndefinedResultError
from shapcam.evalharness import (
    Annotation,
    BBox,
    Curve,
    EvalRecord,
    MethodResult,
    average_drop,
    average_increase,
    build_report,
    deletion_curve,
    evaluate_image,
    insertion_curve,
    masked_input,
    pointing_proportion,
    read_annotations,
    report_to_csv,
    student_loss,
    upsample_saliency,
)
from shapcam.model import full_forward, toynet
from shapcam.shapley import SaliencyMap
from shapcam.tensor import Tensor


def T(arr):
    return Tensor.from_array(np.asarray(arr, dtype=np.float64))


def seed0_image():
    return Tensor.from_array(np.random.default_rng(0).uniform(0, 1, (3, 12, 12)))


# --- masked_input ---------------------------------------------------------------


def test_masked_input_top_half_example():
    image = T(np.ones((1, 2, 2)))
    sal = np.array([[4.0, 3.0], [2.0, 1.0]])
    out = masked_input(image, sal, 0.5)
    assert np.array_equal(out.array, [[[1.0, 1.0], [0.0, 0.0]]])


def test_masked_input_keep_all_is_identity():
    image = seed0_image()
    sal = np.random.default_rng(1).uniform(0.1, 1.0, (12, 12))
    out = masked_input(image, sal, 1.0)
    assert np.array_equal(out.array, image.array)


def test_masked_input_single_pixel():
    image = T(np.arange(12, dtype=float).reshape(3, 2, 2) + 1.0)
    sal = np.array([[0.0, 9.0], [0.0, 0.0]])
    out = masked_input(image, sal, 0.25)
    expected = np.zeros((3, 2, 2))
    expected[:, 0, 1] = image.array[:, 0, 1]
    assert np.array_equal(out.array, expected)


def test_masked_input_ties_break_row_major():
    image = T(np.ones((1, 2, 2)))
    out = masked_input(image, np.ones((2, 2)), 0.5)
    # all saliency equal: the first two pixels in row-major order win
    assert np.array_equal(out.array, [[[1.0, 1.0], [0.0, 0.0]]])


def test_masked_input_validation():
    with pytest.raises(ValueError):
        masked_input(seed0_image(), np.ones((12, 12)), 0.0)
    with pytest.raises(ShapeError):
        masked_input(seed0_image(), np.ones((3, 3)), 0.5)


# --- average drop / increase ------------------------------------------------------


def test_average_drop_worked_examples():
    # 0.8 and 0.6 are not exact binary floats; 1e-9 is the pinned tolerance
    assert average_drop([(0.8, 0.6)]) == pytest.approx(25.0, abs=1e-9)
    assert average_drop([(0.5, 0.9), (0.3, 0.3)]) == 0.0
    assert average_drop([(0.5, 0.25), (1.0, 1.0)]) == 25.0


def test_average_drop_excludes_zero_confidence():
    assert average_drop([(0.0, 0.5), (0.8, 0.6)]) == pytest.approx(25.0, abs=1e-9)
    with pytest.raises(UndefinedResultError):
        average_drop([(0.0, 0.5)])
    with pytest.raises(UndefinedResultError):
        average_drop([])


def test_average_increase_worked_examples():
    assert average_increase([(0.2, 0.5), (0.1, 0.2)]) == 100.0
    assert average_increase([(0.2, 0.2), (0.1, 0.1)]) == 0.0
    assert average_increase([(0.5, 0.9), (0.5, 0.1), (0.5, 0.2), (0.5, 0.3)]) == 25.0


def test_faithfulness_metrics_are_permutation_invariant():
    rng = np.random.default_rng(5)
    pairs = [(float(y), float(o)) for y, o in rng.uniform(0.01, 1.0, (20, 2))]
    shuffled = [pairs[i] for i in rng.permutation(20)]
    # summation order may round differently; the value itself is order-free
    assert average_drop(pairs) == pytest.approx(average_drop(shuffled), abs=1e-12)
    assert average_increase(pairs) == average_increase(shuffled)


# --- curves ------------------------------------------------------------------------


def test_curve_endpoints_and_shared_identities():
    net = toynet()
    image = seed0_image()
    sal = np.random.default_rng(2).uniform(0, 1, (12, 12))
    dele = deletion_curve(net, image, sal, 5)
    inse = insertion_curve(net, image, sal, 5)
    full_prob = float(full_forward(net, image).array[5])
    zero_prob = float(full_forward(net, T(np.zeros((3, 12, 12)))).array[5])
    assert dele.points[0] == full_prob
    assert dele.points[100] == zero_prob
    assert inse.points[0] == zero_prob
    assert inse.points[100] == full_prob
    # shared endpoints, exactly
    assert dele.points[0] == inse.points[100]
    assert dele.points[100] == inse.points[0]
    for curve in (dele, inse):
        assert curve.points.shape == (101,)
        assert curve.points.min() <= curve.auc <= curve.points.max()


def test_constant_scorer_gives_flat_curve_with_auc_equal_to_it():
    image = seed0_image()
    sal = np.random.default_rng(3).uniform(0, 1, (12, 12))
    curve = deletion_curve(lambda img: 0.37, image, sal, 0)
    assert np.array_equal(curve.points, np.full(101, 0.37))
    assert abs(curve.auc - 0.37) <= 1e-12


def test_insertion_is_monotone_under_a_sum_scorer():
    # scorer = softmax over (sum of kept pixel values, 0): restoring any
    # non-negative pixel can only raise the score
    def sum_scorer(img):
        s = float(img.array.sum())
        return float(np.exp(s) / (np.exp(s) + 1.0))

    image = T(np.random.default_rng(4).uniform(0, 0.2, (3, 6, 6)))
    sal = np.random.default_rng(5).uniform(0, 1, (6, 6))
    curve = insertion_curve(sum_scorer, image, sal, 0)
    assert (np.diff(curve.points) >= 0).all()


def test_curve_validation():
    with pytest.raises(ShapeError):
        Curve(np.zeros(100), 0.0)
    with pytest.raises(ShapeError):
        deletion_curve(lambda img: 0.5, seed0_image(), np.ones((4, 4)), 0)


# --- pointing game -------------------------------------------------------------------


def test_pointing_entirely_inside_box():
    sal = np.zeros((8, 8))
    sal[2:4, 2:4] = 1.0
    assert pointing_proportion(sal, BBox(0, 2, 2, 4, 4)) == 1.0


def test_pointing_uniform_saliency_quarter_box():
    sal = np.ones((8, 8))
    assert pointing_proportion(sal, BBox(0, 0, 0, 4, 4)) == 0.25


def test_pointing_half_energy_inside():
    sal = np.zeros((4, 4))
    sal[0, 0] = 3.0
    sal[3, 3] = 3.0
    assert pointing_proportion(sal, BBox(0, 0, 0, 2, 2)) == 0.5


def test_pointing_rectifies_before_summing():
    sal = np.full((4, 4), -1.0)
    sal[1, 1] = 2.0
    assert pointing_proportion(sal, BBox(0, 0, 0, 2, 2)) == 1.0


def test_pointing_is_scale_invariant():
    rng = np.random.default_rng(6)
    sal = rng.uniform(-1, 1, (10, 10))
    box = BBox(0, 1, 2, 7, 9)
    a = pointing_proportion(sal, box)
    b = pointing_proportion(sal * 137.0, box)
    assert abs(a - b) <= 1e-15


def test_pointing_zero_saliency_is_undefined():
    with pytest.raises(UndefinedResultError):
        pointing_proportion(np.full((4, 4), -0.5), BBox(0, 0, 0, 2, 2))


def test_bbox_validation_and_scaling():
    with pytest.raises(ShapeError):
        BBox(0, 2, 0, 2, 4)
    with pytest.raises(ShapeError):
        BBox(0, -1, 0, 2, 4)
    scaled = BBox(0, 2, 2, 4, 4).scaled(0.1, 0.1)
    assert scaled.x1 > scaled.x0 and scaled.y1 > scaled.y0
    with pytest.raises(ShapeError):
        pointing_proportion(np.ones((4, 4)), BBox(0, 0, 0, 5, 2))


# --- distillation loss ----------------------------------------------------------------


def test_student_loss_worked_examples():
    a = np.random.default_rng(7).uniform(0, 1, (3, 3))
    assert student_loss(0.9, a, a, alpha=2.0) == 0.9
    b = a.copy()
    b[1, 2] += 1.0
    assert student_loss(0.5, a, b, alpha=1.0) == 1.5
    assert student_loss(0.5, a, b, alpha=0.0) == 0.5


def test_student_loss_validation():
    with pytest.raises(ShapeError):
        student_loss(0.0, np.zeros((2, 2)), np.zeros((3, 3)), 1.0)
    with pytest.raises(ValueError):
        student_loss(0.0, np.zeros((2, 2)), np.zeros((2, 2)), -1.0)


# --- annotations ------------------------------------------------------------------------


def test_read_annotations_mixed_lines(tmp_path):
    path = tmp_path / "ann.jsonl"
    path.write_text(
        '{"image": "a.ppm", "class": 3, "bbox": [1, 2, 5, 6]}\n'
        "\n"
        'not json at all\n'
        '{"image": "b.ppm", "class": 1}\n'
        '{"image": "c.ppm", "class": 2, "bbox": [5, 5, 1, 1]}\n'
    )
    annotations, errors = read_annotations(path)
    assert [a.image for a in annotations] == ["a.ppm", "b.ppm"]
    assert annotations[0].bbox == BBox(3, 1, 2, 5, 6)
    assert annotations[1].bbox is None
    assert len(errors) == 2
    assert errors[0].startswith("line 3:")
    assert errors[1].startswith("line 5:")


# --- evaluate_image and reports ------------------------------------------------------------


def test_evaluate_image_full_metrics():
    net = toynet()
    image = seed0_image()
    sal = SaliencyMap(np.random.default_rng(8).uniform(0, 1, (3, 3)), "random", 5)
    result = evaluate_image(net, image, sal, 5, bbox=BBox(5, 0, 0, 6, 6))
    assert result.base_prob == float(full_forward(net, image).array[5])
    assert result.drop_pct is not None and 0.0 <= result.drop_pct <= 100.0
    assert result.increase_flag in (True, False)
    assert result.deletion is not None and result.insertion is not None
    assert result.deletion.points[0] == result.insertion.points[100]
    assert result.proportion is not None and 0.0 <= result.proportion <= 1.0
    assert result.exclusions == ()


def test_evaluate_image_counts_exclusions():
    net = toynet()
    image = seed0_image()
    sal = SaliencyMap(np.zeros((3, 3)), "x", 5)
    result = evaluate_image(net, image, sal, 5, metrics=("pointing",))
    assert result.exclusions == ("pointing:missing-bbox",)
    result2 = evaluate_image(net, image, sal, 5, metrics=("pointing",), bbox=BBox(5, 0, 0, 4, 4))
    assert result2.exclusions == ("pointing:zero-saliency",)
    with pytest.raises(ValueError):
        evaluate_image(net, image, sal, 5, metrics=("drop", "wibble"))


def test_upsample_saliency_shapes():
    sal = SaliencyMap(np.random.default_rng(9).uniform(0, 1, (3, 3)), "x", 0)
    up = upsample_saliency(sal, 12, 12)
    assert up.shape == (12, 12)
    assert up.method == "x"
    same = upsample_saliency(up, 12, 12)
    assert np.array_equal(same.grid, up.grid)


def make_records():
    r1 = EvalRecord("a.ppm", 1)
    r1.methods["m"] = MethodResult(
        base_prob=0.8, masked_prob=0.6, drop_pct=25.0, increase_flag=False,
    )
    r2 = EvalRecord("b.ppm", 2)
    r2.methods["m"] = MethodResult(
        base_prob=0.5, masked_prob=0.75, drop_pct=0.0, increase_flag=True,
        exclusions=("pointing:missing-bbox",),
    )
    return [r1, r2]


def test_build_report_aggregates_and_exclusions():
    records = make_records()
    report = build_report(records, config={"method": "m"}, annotation_errors=["line 9: bad"])
    assert report["schema_version"] == 1
    agg = report["methods"]["m"]
    assert agg["images"] == 2
    assert agg["average_drop"] == 12.5
    assert agg["average_increase"] == 50.0
    assert agg["exclusions"] == {"pointing:missing-bbox": 1}
    assert report["annotation_errors"] == ["line 9: bad"]
    assert "reference" not in report

    with_ref = build_report(records, config={}, include_reference=True)
    ref = with_ref["reference"]
    assert ref["source"] == "transcribed"
    assert ref["recognition_imagenet_vgg16"]["average_drop"]["shapcam"] == 28.0
    assert ref["pointing_voc2007"]["resnet18"]["shapcam"] == 41.28
    assert ref["distillation_cifar10_test_error"]["with_kd"]["shapcam"] == 5.37


def test_report_to_csv_layout():
    csv = report_to_csv(build_report(make_records(), config={}))
    lines = csv.split("\n")
    assert lines[0].startswith("method,images,average_drop")
    assert lines[1].startswith("m,2,12.5,50.0")
    assert csv.endswith("\n") and "\r" not in csv
