"""Dense float64 tensor type and the forward-only numeric kernels.

Every kernel is a pure function: no input is mutated, identical inputs
produce bit-identical outputs, and every produced tensor is validated to be
finite. Layout is row-major throughout; images and feature maps are CHW.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError

__all__ = [
    "Tensor",
    "conv2d",
    "relu",
    "maxpool2d",
    "dense",
    "global_average_pool",
    "softmax",
    "bilinear_resize",
]


@dataclass(frozen=True)
class Tensor:
    """Immutable dense tensor: a shape plus flat float64 data in row-major order."""

    shape: tuple[int, ...]
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        shape = tuple(int(d) for d in self.shape)
        object.__setattr__(self, "shape", shape)
        if len(shape) == 0:
            raise ShapeError("tensor must have at least one dimension")
        if any(d < 1 for d in shape):
            raise ShapeError(f"all dimensions must be >= 1, got {shape}")
        data = np.ascontiguousarray(self.data, dtype=np.float64).reshape(-1)
        if data.size != int(np.prod(shape)):
            raise ShapeError(
                f"shape {shape} implies {int(np.prod(shape))} elements, "
                f"got {data.size}"
            )
        if not np.isfinite(data).all():
            raise ShapeError("tensor data contains NaN or Inf")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @classmethod
    def from_array(cls, arr) -> "Tensor":
        arr = np.asarray(arr, dtype=np.float64)
        return cls(arr.shape, arr.reshape(-1))

    @property
    def array(self) -> np.ndarray:
        """Read-only ndarray view with this tensor's shape."""
        return self.data.reshape(self.shape)

    @property
    def ndim(self) -> int:
        return len(self.shape)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Tensor)
            and self.shape == other.shape
            and np.array_equal(self.data, other.data)
        )


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ShapeError(message)


def conv2d(
    input: Tensor,
    weights: Tensor,
    bias: Tensor,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """2-D cross-correlation with zero padding.

    ``input`` is CHW, ``weights`` is OutC x InC x Kh x Kw, ``bias`` has length
    OutC. Output spatial dims are floor((H + 2*padding - K) / stride) + 1.
    """
    _require(input.ndim == 3, f"conv2d input must be CHW, got shape {input.shape}")
    _require(weights.ndim == 4, f"conv2d weights must be 4-D, got shape {weights.shape}")
    out_c, in_c, kh, kw = weights.shape
    c, h, w = input.shape
    _require(
        c == in_c,
        f"conv2d channel mismatch: input has {c} channels, weights expect {in_c}",
    )
    _require(bias.shape == (out_c,), f"conv2d bias must have length {out_c}, got shape {bias.shape}")
    _require(stride >= 1, f"conv2d stride must be positive, got {stride}")
    _require(padding >= 0, f"conv2d padding must be non-negative, got {padding}")
    out_h = (h + 2 * padding - kh) // stride + 1
    out_w = (w + 2 * padding - kw) // stride + 1
    _require(
        out_h >= 1 and out_w >= 1,
        f"conv2d output would be {out_h}x{out_w} for input {h}x{w}, "
        f"kernel {kh}x{kw}, stride {stride}, padding {padding}",
    )

    x = input.array
    if padding > 0:
        x = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    windows = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(1, 2))
    windows = windows[:, ::stride, ::stride][:, :out_h, :out_w]
    out = np.einsum("oikl,ihwkl->ohw", weights.array, windows, optimize=True)
    out = out + bias.array[:, None, None]
    return Tensor.from_array(out)


def relu(input: Tensor) -> Tensor:
    """Elementwise max(0, x); shape preserved."""
    return Tensor(input.shape, np.maximum(input.data, 0.0))


def maxpool2d(input: Tensor, window: int, stride: int) -> Tensor:
    """Per-channel windowed maximum over a CHW tensor."""
    _require(input.ndim == 3, f"maxpool2d input must be CHW, got shape {input.shape}")
    _require(window >= 1 and stride >= 1, "maxpool2d window and stride must be positive")
    c, h, w = input.shape
    _require(
        h >= window and w >= window,
        f"maxpool2d window {window} exceeds spatial dims {h}x{w}",
    )
    out_h = (h - window) // stride + 1
    out_w = (w - window) // stride + 1
    windows = np.lib.stride_tricks.sliding_window_view(input.array, (window, window), axis=(1, 2))
    windows = windows[:, ::stride, ::stride][:, :out_h, :out_w]
    return Tensor.from_array(windows.max(axis=(3, 4)))


def dense(input: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """Affine map: out[k] = sum_d weights[k, d] * input[d] + bias[k]."""
    _require(input.ndim == 1, f"dense input must be a vector, got shape {input.shape}")
    _require(weights.ndim == 2, f"dense weights must be 2-D, got shape {weights.shape}")
    k, d = weights.shape
    _require(
        input.shape == (d,),
        f"dense length mismatch: weights expect input of length {d}, got {input.shape[0]}",
    )
    _require(bias.shape == (k,), f"dense bias must have length {k}, got shape {bias.shape}")
    return Tensor.from_array(weights.array @ input.data + bias.data)


def global_average_pool(input: Tensor) -> Tensor:
    """Per-channel spatial mean of a CHW tensor."""
    _require(input.ndim == 3, f"global_average_pool input must be CHW, got shape {input.shape}")
    return Tensor.from_array(input.array.mean(axis=(1, 2)))


def softmax(logits: Tensor) -> Tensor:
    """Numerically stable softmax over a vector (max-subtraction)."""
    _require(logits.ndim == 1, f"softmax input must be a vector, got shape {logits.shape}")
    z = logits.data - logits.data.max()
    e = np.exp(z)
    return Tensor.from_array(e / e.sum())


def _axis_coords(src: int, dst: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # Half-pixel-center sampling, clamped to the valid source range.
    pos = (np.arange(dst, dtype=np.float64) + 0.5) * (src / dst) - 0.5
    pos = np.clip(pos, 0.0, src - 1.0)
    i0 = np.floor(pos).astype(np.intp)
    i1 = np.minimum(i0 + 1, src - 1)
    return i0, i1, pos - i0


def bilinear_resize(input: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear interpolation of a CHW tensor to out_h x out_w.

    Source coordinates follow the half-pixel-center convention
    (dst + 0.5) * (src / dst) - 0.5, clamped to the source extent. The
    interpolation form v0 + f * (v1 - v0) is exact on constant inputs and the
    identity when out sizes equal the input sizes.
    """
    _require(input.ndim == 3, f"bilinear_resize input must be CHW, got shape {input.shape}")
    _require(out_h >= 1 and out_w >= 1, "bilinear_resize output dims must be positive")
    c, h, w = input.shape
    x = input.array
    r0, r1, fr = _axis_coords(h, out_h)
    c0, c1, fc = _axis_coords(w, out_w)

    top = x[:, r0, :]
    bot = x[:, r1, :]
    rows = top + fr[None, :, None] * (bot - top)
    left = rows[:, :, c0]
    right = rows[:, :, c1]
    out = left + fc[None, None, :] * (right - left)
    return Tensor.from_array(out)
