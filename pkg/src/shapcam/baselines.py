"""Forward-only comparison saliency methods: channel scoring, randomized
input masking, and a random control.

All three are deterministic under a fixed seed and never touch gradients.
"""

from __future__ import annotations

import numpy as np

from .model import NetworkSplit, forward_head, full_forward
from .shapley import SaliencyMap, _check_seed
from .tensor import Tensor, bilinear_resize

__all__ = ["score_cam", "rise", "random_saliency", "image_scorer"]


def image_scorer(model, target_class: int):
    """Normalize the ways of scoring a full input image to one callable.

    Accepts a NetworkSplit (full in-process forward), an oracle whose
    map_shape is the input-image shape (an adapter run with an input-level
    split), or a plain callable(image) -> probability.
    """
    if isinstance(model, NetworkSplit):
        return lambda image: float(full_forward(model, image).array[target_class])
    if hasattr(model, "score"):
        return lambda image: float(model.score(image, target_class))
    if callable(model):
        return model
    raise TypeError(f"cannot score images with {type(model).__name__}")


def score_cam(net: NetworkSplit, image: Tensor, target_class: int) -> SaliencyMap:
    """Channel-scoring saliency: each activation channel, upsampled and
    min-max normalized, masks the input; its target-class probability on a
    fresh forward pass weights that channel. The grid is the rectified
    weighted sum of channels. Constant (zero-range) channels get weight 0.
    """
    if not 0 <= target_class < net.num_classes:
        raise ValueError(f"class {target_class} outside 0..{net.num_classes - 1}")
    fm = forward_head(net, image).array
    c, h, w = fm.shape
    _, in_h, in_w = net.input_shape

    weights = np.zeros(c)
    for k in range(c):
        chan = fm[k]
        lo, hi = chan.min(), chan.max()
        if hi == lo:
            continue
        up = bilinear_resize(Tensor.from_array(chan[None, :, :]), in_h, in_w).array[0]
        norm = (up - up.min()) / (up.max() - up.min())
        masked = Tensor.from_array(image.array * norm[None, :, :])
        weights[k] = full_forward(net, masked).array[target_class]

    grid = np.maximum(np.tensordot(weights, fm, axes=1), 0.0)
    return SaliencyMap(
        grid=grid,
        method="scorecam",
        target_class=target_class,
        meta={"channel_weights": weights.tolist()},
    )


def rise(
    model,
    image: Tensor,
    target_class: int,
    num_masks: int = 4000,
    cell_grid: int = 7,
    keep_prob: float = 0.5,
    seed: int = 0,
) -> SaliencyMap:
    """Randomized-mask saliency at input resolution.

    Binary masks are drawn on a coarse cell grid, bilinearly upsampled,
    applied multiplicatively, and averaged with the resulting probabilities
    as weights: saliency = (1/(N*keep_prob)) * sum_r prob_r * mask_r.
    Accumulation runs in mask-index order, so the result is independent of
    how scoring was scheduled.
    """
    if num_masks < 1:
        raise ValueError(f"num_masks must be >= 1, got {num_masks}")
    if cell_grid < 1:
        raise ValueError(f"cell_grid must be >= 1, got {cell_grid}")
    if not 0.0 < keep_prob <= 1.0:
        raise ValueError(f"keep_prob must be in (0, 1], got {keep_prob}")
    seed = _check_seed(seed)
    score = image_scorer(model, target_class)

    _, in_h, in_w = image.shape
    rng = np.random.default_rng(seed)
    cells = (rng.random((num_masks, cell_grid, cell_grid)) < keep_prob).astype(np.float64)

    acc = np.zeros((in_h, in_w))
    for r in range(num_masks):
        mask = bilinear_resize(Tensor.from_array(cells[r][None, :, :]), in_h, in_w).array[0]
        prob = score(Tensor.from_array(image.array * mask[None, :, :]))
        acc += prob * mask
    grid = acc / (num_masks * keep_prob)
    return SaliencyMap(
        grid=grid,
        method="rise",
        target_class=target_class,
        meta={"num_masks": num_masks, "cell_grid": cell_grid, "keep_prob": keep_prob, "seed": seed},
    )


def random_saliency(h: int, w: int, seed: int = 0) -> SaliencyMap:
    """Uniform [0,1) control grid: the floor any real method must beat."""
    if h < 1 or w < 1:
        raise ValueError(f"grid must be at least 1x1, got {h}x{w}")
    seed = _check_seed(seed)
    grid = np.random.default_rng(seed).random((h, w))
    return SaliencyMap(grid=grid, method="random", target_class=-1, meta={"seed": seed})
