"""Split a torch classifier at a named layer: capture features, inject maps."""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


class SplitRunner:
    """Runs a model with a feature-map slot at one named submodule.

    ``inject="output"`` treats the submodule's post-activation output as the
    feature map; ``inject="input"`` uses its first input instead (so splitting
    at the very first layer with ``inject="input"`` makes the "map" the model
    input itself, which turns score requests into whole-image scoring).

    Scoring applies softmax to the model output, so models should end in
    logits.
    """

    def __init__(self, model: nn.Module, split: str, inject: str = "output",
                 input_shape=(3, 224, 224), normalize: str = "none"):
        if inject not in ("output", "input"):
            raise ValueError(f"inject must be 'output' or 'input', got {inject!r}")
        if normalize not in ("none", "imagenet"):
            raise ValueError(f"normalize must be 'none' or 'imagenet', got {normalize!r}")
        modules = dict(model.named_modules())
        if split not in modules or split == "":
            named = [n for n in modules if n]
            raise ValueError(f"split layer {split!r} not found; model has {named}")
        self.model = model.eval()
        self.split = split
        self.inject_mode = inject
        self.normalize = normalize
        self.input_shape = tuple(int(d) for d in input_shape)
        self._slot: torch.Tensor | None = None
        self._captured: torch.Tensor | None = None

        module = modules[split]
        if inject == "output":
            module.register_forward_hook(self._output_hook)
        else:
            module.register_forward_pre_hook(self._input_hook)

        with torch.no_grad():
            out = self.model(torch.zeros(1, *self.input_shape))
        if out.ndim != 2:
            raise ValueError(f"model output must be (batch, classes), got {tuple(out.shape)}")
        if self._captured is None:
            raise ValueError(f"split layer {split!r} never ran in the forward pass")
        self.classes = int(out.shape[1])
        self.map_shape = tuple(self._captured.shape[1:])

    def _output_hook(self, module, inputs, output):
        if self._slot is not None:
            return self._slot
        self._captured = output.detach()
        return None

    def _input_hook(self, module, inputs):
        if self._slot is not None:
            return (self._slot,) + tuple(inputs[1:])
        self._captured = inputs[0].detach()
        return None

    def _normalized(self, batch: torch.Tensor) -> torch.Tensor:
        if self.normalize == "imagenet":
            mean = torch.tensor(IMAGENET_MEAN).view(1, 3, 1, 1)
            std = torch.tensor(IMAGENET_STD).view(1, 3, 1, 1)
            return (batch - mean) / std
        return batch

    def featurize(self, image: np.ndarray) -> np.ndarray:
        """Feature map (as float64) for one [0,1] image of ``input_shape``."""
        batch = torch.as_tensor(np.asarray(image), dtype=torch.float32).unsqueeze(0)
        if tuple(batch.shape[1:]) != self.input_shape:
            raise ValueError(f"image shape {tuple(batch.shape[1:])} != {self.input_shape}")
        with torch.no_grad():
            self._slot = None
            self.model(self._normalized(batch))
        return self._captured[0].numpy().astype(np.float64)

    def score(self, feature_map: np.ndarray, target_class: int) -> float:
        """Softmax probability of ``target_class`` with the map injected."""
        if not 0 <= target_class < self.classes:
            raise ValueError(f"class {target_class} outside 0..{self.classes - 1}")
        arr = np.asarray(feature_map, dtype=np.float32)
        if arr.shape != self.map_shape:
            raise ValueError(f"map shape {arr.shape} != {self.map_shape}")
        batch = torch.as_tensor(arr).unsqueeze(0)
        if self.inject_mode == "input":
            batch = self._normalized(batch)
        with torch.no_grad():
            self._slot = batch
            try:
                logits = self.model(torch.zeros(1, *self.input_shape))
            finally:
                self._slot = None
        return float(torch.softmax(logits[0], dim=0)[target_class])
