"""Model loading: a deterministic built-in, import paths, torchvision, .pt files."""

from __future__ import annotations

import importlib
from collections import OrderedDict
from pathlib import Path

import torch
from torch import nn


def tiny16() -> nn.Module:
    """Small deterministic CNN for tests and demos: 3x16x16 in, 10 classes.

    The last convolutional activation ("relu2") yields a 16x4x4 feature map.
    """
    generator_state = torch.get_rng_state()
    try:
        torch.manual_seed(16)
        model = nn.Sequential(OrderedDict([
            ("conv1", nn.Conv2d(3, 8, kernel_size=3, padding=1)),
            ("relu1", nn.ReLU()),
            ("pool1", nn.MaxPool2d(2)),
            ("conv2", nn.Conv2d(8, 16, kernel_size=3, stride=2, padding=1)),
            ("relu2", nn.ReLU()),
            ("gap", nn.AdaptiveAvgPool2d(1)),
            ("flatten", nn.Flatten()),
            ("fc", nn.Linear(16, 10)),
        ]))
    finally:
        torch.set_rng_state(generator_state)
    return model.eval()


def resolve_model(name: str) -> nn.Module:
    """Turn a model name into an eval-mode module.

    Resolution order: the built-in ``tiny16``; a ``module:callable`` import
    path; a torchvision constructor name (fresh weights unless the factory
    loads its own); a ``.pt``/``.pth`` file saved with ``torch.save``.
    """
    if name == "tiny16":
        return tiny16()
    if ":" in name:
        module_name, _, attr = name.partition(":")
        try:
            factory = getattr(importlib.import_module(module_name), attr)
        except (ImportError, AttributeError) as exc:
            raise ValueError(f"cannot import model factory {name!r}: {exc}")
        return factory().eval()
    if name.endswith((".pt", ".pth")):
        path = Path(name)
        if not path.exists():
            raise ValueError(f"model file {name!r} does not exist")
        model = torch.load(path, map_location="cpu", weights_only=False)
        if not isinstance(model, nn.Module):
            raise ValueError(f"{name!r} did not contain a torch module")
        return model.eval()
    try:
        import torchvision.models as tv_models
    except ImportError:
        raise ValueError(
            f"model {name!r} is not built in and torchvision is not installed")
    factory = getattr(tv_models, name, None)
    if factory is None:
        raise ValueError(f"unknown model {name!r} (not a torchvision constructor)")
    return factory(weights=None).eval()
