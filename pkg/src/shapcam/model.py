"""Classifier definition, weight (de)serialization, and the head/tail split.

A model is described by a human-readable spec document (key/value lines plus
an ordered layer list) and a binary weight file. Networks are split after the
last convolutional layer's activation: the head maps an input image to the
feature map, the tail maps a feature map to class probabilities.

Weight file layout (all integers little-endian):

    bytes 0..7    magic ``SCAMWT01``
    bytes 8..11   u32 byte length of the manifest text
    manifest      UTF-8 text, one ``entry`` line per parameterized layer
    blob          raw float32 data, weights then bias per entry

A manifest entry ``entry NAME shape=AxBx... offset=N length=M`` covers the
layer's weight tensor (of the given shape) immediately followed by its bias
vector; ``length`` counts the bytes of both. Offsets are relative to the
start of the blob. Weights are stored as float32 and widened to float64 on
load.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .errors import ModelLoadError, ShapeError
from .tensor import (
    Tensor,
    bilinear_resize,
    conv2d,
    dense,
    global_average_pool,
    maxpool2d,
    relu,
    softmax,
)

__all__ = [
    "LayerSpec",
    "ModelSpec",
    "WeightBundle",
    "NetworkSplit",
    "parse_model_spec",
    "parse_weight_file",
    "serialize_weight_bundle",
    "build_weight_file",
    "load_model",
    "full_forward",
    "forward_head",
    "forward_tail",
    "forward_tail_batch",
    "toynet",
    "build_toynet",
    "TOYNET_SPEC",
]

WEIGHT_MAGIC = b"SCAMWT01"

LAYER_KINDS = ("conv", "relu", "maxpool", "gap", "dense", "softmax")

_INT_PARAMS = {
    "conv": ("in", "out", "kernel", "stride", "pad"),
    "maxpool": ("window", "stride"),
    "dense": ("in", "out"),
    "relu": (),
    "gap": (),
    "softmax": (),
}

_PARAM_DEFAULTS = {"stride": 1, "pad": 0}


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str
    params: dict[str, int] = field(default_factory=dict)

    def output_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        """Statically propagate shapes; raises ModelLoadError on mismatch."""
        p = self.params
        if self.kind == "conv":
            if len(in_shape) != 3 or in_shape[0] != p["in"]:
                raise ModelLoadError(
                    f"layer {self.name!r}: conv expects {p['in']}-channel CHW input, "
                    f"got shape {in_shape}"
                )
            h = (in_shape[1] + 2 * p["pad"] - p["kernel"]) // p["stride"] + 1
            w = (in_shape[2] + 2 * p["pad"] - p["kernel"]) // p["stride"] + 1
            if h < 1 or w < 1:
                raise ModelLoadError(f"layer {self.name!r}: conv output collapses to {h}x{w}")
            return (p["out"], h, w)
        if self.kind == "maxpool":
            if len(in_shape) != 3 or in_shape[1] < p["window"] or in_shape[2] < p["window"]:
                raise ModelLoadError(
                    f"layer {self.name!r}: maxpool window {p['window']} does not fit input {in_shape}"
                )
            h = (in_shape[1] - p["window"]) // p["stride"] + 1
            w = (in_shape[2] - p["window"]) // p["stride"] + 1
            return (in_shape[0], h, w)
        if self.kind == "gap":
            if len(in_shape) != 3:
                raise ModelLoadError(f"layer {self.name!r}: gap expects CHW input, got {in_shape}")
            return (in_shape[0],)
        if self.kind == "dense":
            if in_shape != (p["in"],):
                raise ModelLoadError(
                    f"layer {self.name!r}: dense expects vector of length {p['in']}, got {in_shape}"
                )
            return (p["out"],)
        # relu / softmax preserve shape
        if self.kind == "softmax" and len(in_shape) != 1:
            raise ModelLoadError(f"layer {self.name!r}: softmax expects a vector, got {in_shape}")
        return in_shape

    def weight_shape(self) -> tuple[int, ...] | None:
        if self.kind == "conv":
            p = self.params
            return (p["out"], p["in"], p["kernel"], p["kernel"])
        if self.kind == "dense":
            return (self.params["out"], self.params["in"])
        return None

    def bias_length(self) -> int:
        return self.params["out"] if self.kind in ("conv", "dense") else 0


@dataclass(frozen=True)
class ModelSpec:
    name: str
    input_shape: tuple[int, int, int]
    classes: int
    preprocess: str
    layers: tuple[LayerSpec, ...]


def parse_model_spec(text: str) -> ModelSpec:
    """Parse the key/value + layer-list model spec document."""
    meta: dict[str, str] = {}
    layers: list[LayerSpec] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if fields[0] == "layer":
            if len(fields) < 3:
                raise ModelLoadError(f"spec line {lineno}: layer needs a name and a kind")
            name, kind = fields[1], fields[2]
            if kind not in LAYER_KINDS:
                raise ModelLoadError(f"spec line {lineno}: unknown layer kind {kind!r}")
            params = dict(_PARAM_DEFAULTS)
            for item in fields[3:]:
                if "=" not in item:
                    raise ModelLoadError(f"spec line {lineno}: malformed parameter {item!r}")
                key, value = item.split("=", 1)
                try:
                    params[key] = int(value)
                except ValueError:
                    raise ModelLoadError(f"spec line {lineno}: parameter {key}={value!r} is not an integer")
            missing = [k for k in _INT_PARAMS[kind] if k not in params]
            if missing:
                raise ModelLoadError(f"spec line {lineno}: layer {name!r} missing {missing}")
            layers.append(LayerSpec(name, kind, {k: params[k] for k in _INT_PARAMS[kind]}))
        elif len(fields) == 2:
            meta[fields[0]] = fields[1]
        else:
            raise ModelLoadError(f"spec line {lineno}: expected 'key value' or a layer line")

    for key in ("name", "input", "classes"):
        if key not in meta:
            raise ModelLoadError(f"model spec is missing the {key!r} key")
    try:
        input_shape = tuple(int(d) for d in meta["input"].split("x"))
    except ValueError:
        raise ModelLoadError(f"bad input shape {meta['input']!r}")
    if len(input_shape) != 3:
        raise ModelLoadError(f"input shape must be CxHxW, got {meta['input']!r}")
    if not layers:
        raise ModelLoadError("model spec declares no layers")

    spec = ModelSpec(
        name=meta["name"],
        input_shape=input_shape,  # type: ignore[arg-type]
        classes=int(meta["classes"]),
        preprocess=meta.get("preprocess", "none"),
        layers=tuple(layers),
    )
    # Static shape check of the whole chain.
    shape: tuple[int, ...] = spec.input_shape
    for layer in spec.layers:
        shape = layer.output_shape(shape)
    if spec.layers[-1].kind != "softmax":
        raise ModelLoadError("the final layer must be softmax")
    if shape != (spec.classes,):
        raise ModelLoadError(
            f"network output shape {shape} does not match declared classes {spec.classes}"
        )
    return spec


@dataclass(frozen=True)
class ManifestEntry:
    shape: tuple[int, ...]
    offset: int
    length: int


@dataclass(frozen=True)
class WeightBundle:
    manifest: dict[str, ManifestEntry]
    blob: bytes
    manifest_text: bytes  # retained verbatim so serialization round-trips


def parse_weight_file(data: bytes) -> WeightBundle:
    if data[:8] != WEIGHT_MAGIC:
        raise ModelLoadError("weight file does not start with the SCAMWT01 magic")
    if len(data) < 12:
        raise ModelLoadError("weight file truncated before the manifest length")
    (manifest_len,) = struct.unpack_from("<I", data, 8)
    if 12 + manifest_len > len(data):
        raise ModelLoadError("weight file truncated inside the manifest")
    manifest_text = data[12 : 12 + manifest_len]
    blob = data[12 + manifest_len :]

    manifest: dict[str, ManifestEntry] = {}
    for lineno, raw in enumerate(manifest_text.decode("utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if fields[0] != "entry" or len(fields) != 5:
            raise ModelLoadError(f"manifest line {lineno}: expected 'entry NAME shape= offset= length='")
        name = fields[1]
        kv = {}
        for item in fields[2:]:
            key, value = item.split("=", 1)
            kv[key] = value
        try:
            shape = tuple(int(d) for d in kv["shape"].split("x"))
            entry = ManifestEntry(shape, int(kv["offset"]), int(kv["length"]))
        except (KeyError, ValueError):
            raise ModelLoadError(f"manifest line {lineno}: malformed entry for layer {name!r}")
        if name in manifest:
            raise ModelLoadError(f"manifest has duplicate entry for layer {name!r}")
        manifest[name] = entry

    total = sum(e.length for e in manifest.values())
    if total != len(blob):
        raise ModelLoadError(
            f"blob length {len(blob)} does not equal the sum of manifest lengths {total}"
        )
    for name, entry in manifest.items():
        if entry.offset < 0 or entry.offset + entry.length > len(blob):
            raise ModelLoadError(f"manifest entry {name!r} points outside the blob")
    return WeightBundle(manifest, blob, manifest_text)


def serialize_weight_bundle(bundle: WeightBundle) -> bytes:
    return WEIGHT_MAGIC + struct.pack("<I", len(bundle.manifest_text)) + bundle.manifest_text + bundle.blob


def build_weight_file(tensors: dict[str, tuple[np.ndarray, np.ndarray]]) -> bytes:
    """Assemble a weight file from {layer: (weights, bias)} float32 arrays."""
    lines = []
    blob = bytearray()
    for name, (w, b) in tensors.items():
        w32 = np.ascontiguousarray(w, dtype="<f4")
        b32 = np.ascontiguousarray(b, dtype="<f4").reshape(-1)
        offset = len(blob)
        blob += w32.tobytes() + b32.tobytes()
        shape = "x".join(str(d) for d in w32.shape)
        lines.append(f"entry {name} shape={shape} offset={offset} length={len(blob) - offset}")
    manifest_text = ("\n".join(lines) + "\n").encode("utf-8")
    return WEIGHT_MAGIC + struct.pack("<I", len(manifest_text)) + manifest_text + bytes(blob)


@dataclass(frozen=True)
class NetworkSplit:
    """A classifier split after the last convolutional layer's activation."""

    spec: ModelSpec
    weights: dict[str, tuple[Tensor, Tensor]]  # layer -> (weight, bias), float64
    split_index: int  # last head layer index
    feature_shape: tuple[int, int, int]

    @property
    def head_layers(self) -> tuple[LayerSpec, ...]:
        return self.spec.layers[: self.split_index + 1]

    @property
    def tail_layers(self) -> tuple[LayerSpec, ...]:
        return self.spec.layers[self.split_index + 1 :]

    @property
    def input_shape(self) -> tuple[int, int, int]:
        return self.spec.input_shape

    @property
    def num_classes(self) -> int:
        return self.spec.classes


def _apply_layer(layer: LayerSpec, weights, x: Tensor) -> Tensor:
    kind = layer.kind
    if kind == "conv":
        w, b = weights[layer.name]
        return conv2d(x, w, b, stride=layer.params["stride"], padding=layer.params["pad"])
    if kind == "relu":
        return relu(x)
    if kind == "maxpool":
        return maxpool2d(x, layer.params["window"], layer.params["stride"])
    if kind == "gap":
        return global_average_pool(x)
    if kind == "dense":
        w, b = weights[layer.name]
        return dense(x, w, b)
    if kind == "softmax":
        return softmax(x)
    raise ModelLoadError(f"unknown layer kind {kind!r}")


def _split_point(layers: tuple[LayerSpec, ...]) -> int:
    conv_indices = [i for i, l in enumerate(layers) if l.kind == "conv"]
    if not conv_indices:
        raise ModelLoadError("network has no convolutional layer to split at")
    idx = conv_indices[-1]
    if idx + 1 < len(layers) and layers[idx + 1].kind == "relu":
        idx += 1
    if idx + 1 >= len(layers):
        raise ModelLoadError("the last convolutional layer has no tail after it")
    return idx


def load_model(spec_document: str, weight_file: bytes) -> NetworkSplit:
    """Parse, validate, and split a model; errors name the offending layer."""
    spec = parse_model_spec(spec_document)
    bundle = parse_weight_file(weight_file)

    weights: dict[str, tuple[Tensor, Tensor]] = {}
    for layer in spec.layers:
        expected = layer.weight_shape()
        if expected is None:
            continue
        entry = bundle.manifest.get(layer.name)
        if entry is None:
            raise ModelLoadError(f"weight file has no entry for {layer.kind} layer {layer.name!r}")
        if entry.shape != expected:
            raise ModelLoadError(
                f"layer {layer.name!r}: manifest shape {entry.shape} does not match "
                f"spec shape {expected}"
            )
        n_w = int(np.prod(expected))
        n_b = layer.bias_length()
        if entry.length != 4 * (n_w + n_b):
            raise ModelLoadError(
                f"layer {layer.name!r}: entry length {entry.length} does not cover "
                f"{n_w} weights plus {n_b} bias values"
            )
        raw = np.frombuffer(bundle.blob, dtype="<f4", count=n_w + n_b, offset=entry.offset)
        w = Tensor.from_array(raw[:n_w].astype(np.float64).reshape(expected))
        b = Tensor.from_array(raw[n_w:].astype(np.float64))
        weights[layer.name] = (w, b)

    extra = set(bundle.manifest) - {l.name for l in spec.layers if l.weight_shape() is not None}
    if extra:
        raise ModelLoadError(f"weight file has entries for unknown layers: {sorted(extra)}")

    split = _split_point(spec.layers)
    shape: tuple[int, ...] = spec.input_shape
    for layer in spec.layers[: split + 1]:
        shape = layer.output_shape(shape)
    if len(shape) != 3:
        raise ModelLoadError(f"feature map at the split must be CHW, got {shape}")
    return NetworkSplit(spec=spec, weights=weights, split_index=split, feature_shape=shape)  # type: ignore[arg-type]


def _check_input(net: NetworkSplit, image: Tensor) -> None:
    if image.shape != net.input_shape:
        raise ShapeError(
            f"image shape {image.shape} does not match model input {net.input_shape}"
        )


def full_forward(net: NetworkSplit, image: Tensor) -> Tensor:
    """Run the unsplit network: image -> class probabilities."""
    _check_input(net, image)
    x = image
    for layer in net.spec.layers:
        x = _apply_layer(layer, net.weights, x)
    return x


def forward_head(net: NetworkSplit, image: Tensor) -> Tensor:
    """Image -> last-conv feature map (post-activation)."""
    _check_input(net, image)
    x = image
    for layer in net.head_layers:
        x = _apply_layer(layer, net.weights, x)
    return x


def forward_tail(net: NetworkSplit, feature_map: Tensor) -> Tensor:
    """Feature map -> class probability vector."""
    if feature_map.shape != net.feature_shape:
        raise ShapeError(
            f"feature map shape {feature_map.shape} does not match split shape {net.feature_shape}"
        )
    x = feature_map
    for layer in net.tail_layers:
        x = _apply_layer(layer, net.weights, x)
    return x


def forward_tail_batch(net: NetworkSplit, feature_maps: list[Tensor]) -> list[Tensor]:
    """Element-wise forward_tail, results in input order (bit-exact)."""
    return [forward_tail(net, m) for m in feature_maps]


def resize_to_input(net: NetworkSplit, image: Tensor) -> Tensor:
    """Bilinearly resize an image to the model's input resolution if needed."""
    c, h, w = net.input_shape
    if image.shape[0] != c:
        raise ShapeError(f"image has {image.shape[0]} channels, model expects {c}")
    if image.shape == net.input_shape:
        return image
    return bilinear_resize(image, h, w)


# --- bundled toy network --------------------------------------------------

TOYNET_SPEC = """\
# toynet: 2 conv blocks, GAP head, 10 classes (~20k parameters)
name toynet
input 3x12x12
classes 10
preprocess none

layer conv1 conv in=3 out=32 kernel=3 stride=1 pad=1
layer relu1 relu
layer pool1 maxpool window=2 stride=2
layer conv2 conv in=32 out=64 kernel=3 stride=2 pad=1
layer relu2 relu
layer gap1 gap
layer fc dense in=64 out=10
layer prob softmax
"""


def build_toynet(seed: int = 42) -> bytes:
    """Deterministically generate the bundled toynet weight file."""
    rng = np.random.default_rng(seed)

    def he(shape, fan_in):
        return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(np.float32)

    tensors = {
        "conv1": (he((32, 3, 3, 3), 27), rng.uniform(-0.05, 0.05, 32).astype(np.float32)),
        "conv2": (he((64, 32, 3, 3), 288), rng.uniform(-0.05, 0.05, 64).astype(np.float32)),
        "fc": (he((10, 64), 64), rng.uniform(-0.05, 0.05, 10).astype(np.float32)),
    }
    return build_weight_file(tensors)


def toynet() -> NetworkSplit:
    """Load the toy network shipped with the package."""
    weight_bytes = resources.files("shapcam").joinpath("assets/toynet.weights").read_bytes()
    return load_model(TOYNET_SPEC, weight_bytes)
