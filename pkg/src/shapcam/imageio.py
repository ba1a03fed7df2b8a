"""Image decoding, input preprocessing, and artifact rendering.

Binary PPM (P6, 8-bit) is always supported and is the byte-exact interchange
format; PNG works when Pillow is importable. Stored saliency values are never
altered here: rectification and min-max normalization happen only for display.

Overlay colormap (documented contract): display-normalized saliency v in
[0,1] is mapped through linearly interpolated stops

    0.00 -> (  0,   0, 128)
    0.25 -> (  0,   0, 255)
    0.50 -> (  0, 255,   0)
    0.75 -> (255, 255,   0)
    1.00 -> (255,   0,   0)

then blended with the image at alpha 0.5 and quantized as floor(255*x + 0.5).
"""

from __future__ import annotations

import os

import numpy as np

from .errors import ImageError, ShapeError
from .shapley import SaliencyMap
from .tensor import Tensor, bilinear_resize

__all__ = [
    "load_image",
    "write_ppm",
    "preprocess",
    "render_overlay",
    "render_curves",
    "IMAGENET_MEAN",
    "IMAGENET_STD",
    "INPUT_SIZE",
    "COLORMAP_STOPS",
]

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
INPUT_SIZE = 224

COLORMAP_STOPS = (
    (0.00, (0.0, 0.0, 128.0)),
    (0.25, (0.0, 0.0, 255.0)),
    (0.50, (0.0, 255.0, 0.0)),
    (0.75, (255.0, 255.0, 0.0)),
    (1.00, (255.0, 0.0, 0.0)),
)


def _read_ppm_tokens(data: bytes, count: int) -> tuple[list[int], int]:
    """Read ``count`` whitespace-separated integers, honoring # comments.

    Returns the values and the offset just past the single whitespace byte
    that terminates the header.
    """
    values: list[int] = []
    pos = 2  # past the magic
    while len(values) < count:
        if pos >= len(data):
            raise ImageError("truncated PPM header")
        ch = data[pos : pos + 1]
        if ch.isspace():
            pos += 1
        elif ch == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
        elif ch.isdigit():
            start = pos
            while pos < len(data) and data[pos : pos + 1].isdigit():
                pos += 1
            values.append(int(data[start:pos]))
        else:
            raise ImageError(f"unexpected byte {ch!r} in PPM header")
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise ImageError("PPM header not terminated by whitespace")
    return values, pos + 1


def load_image(path) -> Tensor:
    """Decode an RGB image file to a 3 x H x W tensor with values in [0,1]."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] == b"P6":
        (width, height, maxval), offset = _read_ppm_tokens(data, 3)
        if maxval != 255:
            raise ImageError(f"only 8-bit PPM supported, got maxval {maxval}")
        need = width * height * 3
        raster = data[offset : offset + need]
        if len(raster) < need:
            raise ImageError(f"truncated PPM raster: wanted {need} bytes, got {len(raster)}")
        pixels = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, 3)
        return Tensor.from_array(pixels.transpose(2, 0, 1).astype(np.float64) / 255.0)
    if data[:4] == b"\x89PNG":
        try:
            from PIL import Image
        except ImportError:
            raise ImageError("PNG input needs Pillow, which is not installed")
        from io import BytesIO

        with Image.open(BytesIO(data)) as img:
            rgb = np.asarray(img.convert("RGB"), dtype=np.float64)
        return Tensor.from_array(rgb.transpose(2, 0, 1) / 255.0)
    raise ImageError(f"unsupported image format in {os.fspath(path)!r}")


def _quantize(values: np.ndarray) -> np.ndarray:
    return np.floor(np.clip(values, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def write_ppm(path, image: Tensor) -> None:
    """Write a 3 x H x W tensor in [0,1] as binary 8-bit PPM."""
    if image.ndim != 3 or image.shape[0] != 3:
        raise ShapeError(f"PPM writer expects a 3xHxW tensor, got {image.shape}")
    _, h, w = image.shape
    raster = _quantize(image.array).transpose(1, 2, 0).tobytes()
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(raster)


def preprocess(image: Tensor) -> Tensor:
    """Resize to the 224 x 224 network input and channel-normalize."""
    if image.ndim != 3 or image.shape[0] != 3:
        raise ShapeError(f"preprocess expects a 3-channel image, got shape {image.shape}")
    resized = bilinear_resize(image, INPUT_SIZE, INPUT_SIZE)
    mean = np.asarray(IMAGENET_MEAN)[:, None, None]
    std = np.asarray(IMAGENET_STD)[:, None, None]
    return Tensor.from_array((resized.array - mean) / std)


def colormap(values: np.ndarray) -> np.ndarray:
    """Map [0,1] values to RGB planes in [0,1] via the documented stops."""
    positions = np.array([p for p, _ in COLORMAP_STOPS])
    channels = np.array([c for _, c in COLORMAP_STOPS]) / 255.0
    v = np.clip(values, 0.0, 1.0)
    return np.stack([np.interp(v, positions, channels[:, k]) for k in range(3)])


def _display_normalize(grid: np.ndarray) -> np.ndarray:
    grid = np.maximum(grid, 0.0)
    top = grid.max()
    return grid / top if top > 0 else np.zeros_like(grid)


def render_overlay(image: Tensor, saliency, out_path) -> None:
    """Blend the heatmapped saliency over the image and write it out.

    The saliency is upsampled to the image size, rectified, and min-max
    normalized for display only. Output format follows the extension:
    .ppm always works, .png needs Pillow.
    """
    if image.ndim != 3 or image.shape[0] != 3:
        raise ShapeError(f"overlay expects a 3-channel image, got shape {image.shape}")
    grid = saliency.grid if isinstance(saliency, SaliencyMap) else np.asarray(saliency, dtype=np.float64)
    _, h, w = image.shape
    if grid.shape != (h, w):
        grid = bilinear_resize(Tensor.from_array(grid[None, :, :]), h, w).array[0]
    heat = colormap(_display_normalize(grid))
    blended = Tensor.from_array(0.5 * image.array + 0.5 * heat)
    path = os.fspath(out_path)
    if path.endswith(".png"):
        try:
            from PIL import Image
        except ImportError:
            raise ImageError("PNG output needs Pillow, which is not installed")
        Image.fromarray(_quantize(blended.array).transpose(1, 2, 0), mode="RGB").save(path)
    else:
        write_ppm(path, blended)


def render_curves(curves: dict, out_path) -> list[str]:
    """Write curve points as CSV (the contract) plus a best-effort plot.

    ``curves`` maps names to 101-point sequences or Curve-like objects with
    a ``points`` attribute. Returns the paths written; the plot is skipped
    silently when matplotlib is unavailable.
    """
    if not curves:
        raise ValueError("no curves to render")
    series: dict[str, np.ndarray] = {}
    for name, curve in curves.items():
        pts = np.asarray(getattr(curve, "points", curve), dtype=np.float64)
        if pts.ndim != 1 or pts.size != 101:
            raise ShapeError(f"curve {name!r} must have 101 points, got shape {pts.shape}")
        series[str(name)] = pts

    names = list(series)
    lines = [",".join(["fraction"] + names)]
    for t in range(101):
        row = [repr(t / 100.0)] + [repr(float(series[name][t])) for name in names]
        lines.append(",".join(row))
    path = os.fspath(out_path)
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    written = [path]

    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        return written
    fig, ax = plt.subplots(figsize=(5, 4))
    xs = np.arange(101) / 100.0
    for name in names:
        ax.plot(xs, series[name], label=name)
    ax.set_xlabel("pixel fraction")
    ax.set_ylabel("probability")
    ax.set_ylim(bottom=0.0)
    ax.legend()
    plot_path = os.path.splitext(path)[0] + ".png"
    fig.savefig(plot_path, dpi=100)
    plt.close(fig)
    written.append(plot_path)
    return written
