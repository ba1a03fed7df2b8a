"""Model resolution and split-runner behavior for the scoring adapter."""

import numpy as np
import pytest
import torch

from shapcam_adapter import SplitRunner, resolve_model, tiny16

SHAPE = (3, 16, 16)


def _image(seed=0):
    return np.random.default_rng(seed).uniform(0.0, 1.0, SHAPE)


def _direct_prob(model, image, target, normalize=False):
    batch = torch.as_tensor(image, dtype=torch.float32).unsqueeze(0)
    if normalize:
        from shapcam_adapter.splitmodel import IMAGENET_MEAN, IMAGENET_STD
        mean = torch.tensor(IMAGENET_MEAN).view(1, 3, 1, 1)
        std = torch.tensor(IMAGENET_STD).view(1, 3, 1, 1)
        batch = (batch - mean) / std
    with torch.no_grad():
        return float(torch.softmax(model(batch)[0], dim=0)[target])


# --- model resolution ---------------------------------------------------------------


def test_tiny16_is_deterministic_across_instantiations():
    a, b = tiny16(), tiny16()
    for (name, pa), (_, pb) in zip(a.state_dict().items(), b.state_dict().items()):
        assert torch.equal(pa, pb), name


def test_tiny16_does_not_disturb_global_rng():
    torch.manual_seed(1234)
    before = torch.rand(4)
    torch.manual_seed(1234)
    tiny16()
    after = torch.rand(4)
    assert torch.equal(before, after)


def test_resolve_builtin_name():
    model = resolve_model("tiny16")
    assert isinstance(model, torch.nn.Module)
    assert not model.training


def test_resolve_module_colon_callable():
    model = resolve_model("shapcam_adapter.models:tiny16")
    assert torch.equal(model.state_dict()["fc.weight"], tiny16().state_dict()["fc.weight"])


def test_resolve_checkpoint_round_trip(tmp_path):
    path = tmp_path / "model.pt"
    torch.save(tiny16(), path)
    loaded = resolve_model(str(path))
    img = _image()
    assert _direct_prob(loaded, img, 0) == _direct_prob(tiny16(), img, 0)


def test_resolve_checkpoint_rejects_non_module(tmp_path):
    path = tmp_path / "weights.pt"
    torch.save({"just": "a dict"}, path)
    with pytest.raises(ValueError, match="torch module"):
        resolve_model(str(path))


def test_resolve_torchvision_constructor():
    torchvision = pytest.importorskip("torchvision")
    model = resolve_model("resnet18")
    assert type(model).__name__ == "ResNet"
    assert not model.training


def test_resolve_unknown_name_raises():
    with pytest.raises(ValueError):
        resolve_model("no_such_model_anywhere")


# --- split runner: capture and injection --------------------------------------------


def test_featurize_then_score_replays_forward_exactly():
    model = tiny16()
    runner = SplitRunner(model, "relu2", input_shape=SHAPE)
    assert runner.classes == 10
    assert runner.map_shape == (16, 4, 4)
    img = _image(1)
    feature_map = runner.featurize(img)
    assert feature_map.shape == (16, 4, 4)
    assert feature_map.dtype == np.float64
    for target in range(10):
        assert runner.score(feature_map, target) == _direct_prob(model, img, target)


def test_input_injection_turns_maps_into_images():
    model = tiny16()
    runner = SplitRunner(model, "conv1", inject="input", input_shape=SHAPE)
    assert runner.map_shape == SHAPE
    img = _image(2)
    assert runner.score(img, 5) == _direct_prob(model, img, 5)


def test_output_injection_at_first_layer_differs_from_input():
    runner = SplitRunner(tiny16(), "conv1", inject="output", input_shape=SHAPE)
    assert runner.map_shape == (8, 16, 16)


def test_imagenet_normalization_applies_to_image_level_maps():
    model = tiny16()
    runner = SplitRunner(model, "conv1", inject="input", input_shape=SHAPE,
                         normalize="imagenet")
    img = _image(3)
    assert runner.score(img, 2) == pytest.approx(
        _direct_prob(model, img, 2, normalize=True), abs=1e-7)


def test_scores_are_probabilities():
    runner = SplitRunner(tiny16(), "relu2", input_shape=SHAPE)
    feature_map = runner.featurize(_image(4))
    probs = [runner.score(feature_map, t) for t in range(runner.classes)]
    assert all(0.0 <= p <= 1.0 for p in probs)
    assert sum(probs) == pytest.approx(1.0, abs=1e-6)


def test_identical_requests_identical_probabilities():
    runner = SplitRunner(tiny16(), "relu2", input_shape=SHAPE)
    feature_map = runner.featurize(_image(5))
    assert runner.score(feature_map, 7) == runner.score(feature_map, 7)


# --- split runner: validation --------------------------------------------------------


def test_unknown_split_lists_valid_names():
    with pytest.raises(ValueError, match="conv1"):
        SplitRunner(tiny16(), "block9", input_shape=SHAPE)


def test_bad_inject_and_normalize_rejected():
    with pytest.raises(ValueError, match="inject"):
        SplitRunner(tiny16(), "relu2", inject="sideways", input_shape=SHAPE)
    with pytest.raises(ValueError, match="normalize"):
        SplitRunner(tiny16(), "relu2", normalize="zscore", input_shape=SHAPE)


def test_score_validates_class_and_shape():
    runner = SplitRunner(tiny16(), "relu2", input_shape=SHAPE)
    feature_map = runner.featurize(_image(6))
    with pytest.raises(ValueError, match="class"):
        runner.score(feature_map, 10)
    with pytest.raises(ValueError, match="shape"):
        runner.score(feature_map[:, :2, :], 0)


def test_featurize_validates_image_shape():
    runner = SplitRunner(tiny16(), "relu2", input_shape=SHAPE)
    with pytest.raises(ValueError, match="shape"):
        runner.featurize(np.zeros((3, 8, 8)))
