"""Depthwise-separable CNN graph with a seven-way softmax head.

The backbone is the standard 13-block depthwise-separable plan: a stride-2
3x3 stem into 32*alpha channels, then blocks of (3x3 depthwise + BN + act,
1x1 pointwise + BN + act) with stride 2 at blocks 2, 4, 6 and 12, ending
in 1024*alpha channels, global average pooling, dropout, a dense layer
and softmax. Only the dense head is ever trainable here; backbone weights
are imported or randomly initialized.

Weight files use the DWSN container:

  bytes 0..3    magic "DWSN"
  bytes 4..7    version (1) as little-endian uint32
  bytes 8..15   header byte length L as little-endian uint64
  bytes 16..16+L UTF-8 JSON list of records, in tensor order:
                {"name", "dtype" ("f32"), "shape", "offset", "nbytes"}
  then          raw little-endian float32 payload, row-major,
                offsets relative to the payload start, no padding.

A save/load round trip is bit-identical on every weight buffer.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import (
    MissingWeightError,
    ShapeError,
    TruncatedPayloadError,
    ValidationError,
    WeightFormatError,
    WeightShapeError,
)
from .labels import CLASS_LABELS, ClassLabels
from .nn_ops import (
    ACTIVATIONS,
    BatchNormParams,
    ConvParams,
    batchnorm_infer,
    conv2d,
    conv_output_size,
    dense_forward,
    depthwise_conv2d,
    dropout,
    global_avg_pool,
    softmax,
)
from .tensor import Tensor

STEM_CHANNELS = 32
BLOCK_CHANNELS = (64, 128, 128, 256, 256, 512, 512, 512, 512, 512, 512, 1024, 1024)
BLOCK_STRIDES = (1, 2, 1, 2, 1, 2, 1, 1, 1, 1, 1, 2, 1)
BN_EPSILON = 1e-3

MAGIC = b"DWSN"
VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    input_size: int = 224
    width_multiplier: float = 1.0
    num_blocks: int = 13
    num_classes: int = 7
    dropout_rate: float = 0.2
    activation: str = "relu6"

    def __post_init__(self):
        if self.input_size < 32 or self.input_size % 32 != 0:
            raise ValidationError(f"input_size must be a positive multiple of 32, got {self.input_size}")
        if not self.width_multiplier > 0:
            raise ValidationError("width_multiplier must be positive")
        if self.num_blocks < 1:
            raise ValidationError("num_blocks must be at least 1")
        if self.num_classes < 2:
            raise ValidationError("num_classes must be at least 2")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValidationError("dropout_rate must be in [0, 1)")
        if self.activation not in ACTIVATIONS:
            raise ValidationError(f"activation must be one of {sorted(ACTIVATIONS)}")

    def scaled(self, channels: int) -> int:
        return max(1, int(round(channels * self.width_multiplier)))

    @property
    def block_plan(self) -> list[tuple[int, int]]:
        """(out_channels, stride) per depthwise-separable block."""
        plan = list(zip(BLOCK_CHANNELS, BLOCK_STRIDES))
        if self.num_blocks <= len(plan):
            return plan[: self.num_blocks]
        return plan + [(BLOCK_CHANNELS[-1], 1)] * (self.num_blocks - len(plan))

    @property
    def feature_width(self) -> int:
        return self.scaled(self.block_plan[-1][0])


@dataclass(frozen=True)
class Layer:
    kind: str
    name: str
    weight_names: tuple[str, ...] = ()
    conv: ConvParams | None = None


@dataclass(frozen=True)
class ModelGraph:
    config: ModelConfig
    layers: tuple[Layer, ...]
    weights: dict[str, Tensor]
    trainable_boundary: int  # layers at index >= boundary own the trainable weights
    labels: ClassLabels

    def weight(self, name: str) -> Tensor:
        return self.weights[name]

    @property
    def head_start(self) -> int:
        """Index of the dropout layer (first layer after the cacheable backbone)."""
        return next(i for i, l in enumerate(self.layers) if l.kind == "Dropout")

    def trainable_weight_names(self) -> tuple[str, ...]:
        names = []
        for layer in self.layers[self.trainable_boundary:]:
            names.extend(layer.weight_names)
        return tuple(names)


def _bn_names(prefix: str) -> tuple[str, ...]:
    return tuple(f"{prefix}/{p}" for p in ("gamma", "beta", "mean", "variance"))


def _uniform_fan_in(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int,
                    gain: float = 6.0) -> Tensor:
    """Uniform init with limit sqrt(gain/fan_in).

    gain 6 keeps ReLU-stack activation variance stable for mixing layers;
    depthwise layers get a larger gain (see build_mobilenet) because their
    per-channel kernels lose mass to the activation and to zero padding,
    and nothing mixes channels back until the next pointwise conv. With
    these gains a randomly initialized backbone still produces usable
    pooled features instead of decaying toward zero over 13 blocks.
    """
    limit = np.sqrt(gain / fan_in)
    return Tensor(rng.uniform(-limit, limit, size=shape).astype(np.float32))


DEPTHWISE_INIT_GAIN = 18.0


def _identity_bn(c: int) -> dict[str, np.ndarray]:
    return {
        "gamma": np.ones(c, dtype=np.float32),
        "beta": np.zeros(c, dtype=np.float32),
        "mean": np.zeros(c, dtype=np.float32),
        "variance": np.ones(c, dtype=np.float32),
    }


def build_mobilenet(config: ModelConfig, rng: np.random.Generator) -> ModelGraph:
    """Assemble the graph with fan-in-uniform conv/dense init and identity BN.

    The returned graph starts with the head_only trainable boundary.
    """
    act = "ReLU6" if config.activation == "relu6" else "ReLU"
    layers: list[Layer] = []
    weights: dict[str, Tensor] = {}

    def add_bn(prefix: str, c: int):
        names = _bn_names(prefix)
        for name, vec in zip(names, _identity_bn(c).values()):
            weights[name] = Tensor(vec)
        layers.append(Layer("BatchNormalization", prefix, names))

    c_in = config.scaled(STEM_CHANNELS)
    weights["stem/conv/kernel"] = _uniform_fan_in(rng, (3, 3, 3, c_in), 3 * 3 * 3)
    layers.append(
        Layer("Conv2D", "stem/conv", ("stem/conv/kernel",), ConvParams((2, 2), "same"))
    )
    add_bn("stem/bn", c_in)
    layers.append(Layer(act, "stem/act"))

    for i, (channels, stride) in enumerate(config.block_plan, start=1):
        c_out = config.scaled(channels)
        dw = f"block{i:02d}/dw"
        weights[f"{dw}/kernel"] = _uniform_fan_in(rng, (3, 3, c_in), 3 * 3, DEPTHWISE_INIT_GAIN)
        layers.append(Layer("DepthwiseConv2D", dw, (f"{dw}/kernel",), ConvParams((stride, stride), "same")))
        add_bn(f"{dw}_bn", c_in)
        layers.append(Layer(act, f"{dw}_act"))
        pw = f"block{i:02d}/pw"
        weights[f"{pw}/kernel"] = _uniform_fan_in(rng, (1, 1, c_in, c_out), c_in)
        layers.append(Layer("Conv2D", pw, (f"{pw}/kernel",), ConvParams((1, 1), "same")))
        add_bn(f"{pw}_bn", c_out)
        layers.append(Layer(act, f"{pw}_act"))
        c_in = c_out

    layers.append(Layer("GlobalAveragePooling", "gap"))
    layers.append(Layer("Dropout", "dropout"))
    weights["head/dense/kernel"] = _uniform_fan_in(rng, (c_in, config.num_classes), c_in)
    weights["head/dense/bias"] = Tensor(np.zeros(config.num_classes, dtype=np.float32))
    dense_index = len(layers)
    layers.append(Layer("Dense", "head/dense", ("head/dense/kernel", "head/dense/bias")))
    layers.append(Layer("Softmax", "head/softmax"))

    if config.num_classes == len(CLASS_LABELS):
        labels = CLASS_LABELS
    else:
        labels = ClassLabels(
            codes=tuple(f"c{i}" for i in range(config.num_classes)),
            display_names=tuple(f"class {i}" for i in range(config.num_classes)),
        )
    return ModelGraph(
        config=config,
        layers=tuple(layers),
        weights=weights,
        trainable_boundary=dense_index,
        labels=labels,
    )


def _bn_params(model: ModelGraph, layer: Layer) -> BatchNormParams:
    g, b, m, v = (model.weights[n].array for n in layer.weight_names)
    return BatchNormParams(g, b, m, v, BN_EPSILON)


def _run_layers(model: ModelGraph, x: Tensor, layers, training: bool,
                rng: np.random.Generator | None) -> Tensor:
    for layer in layers:
        kind = layer.kind
        if kind == "Conv2D":
            x = conv2d(x, model.weights[layer.weight_names[0]], None, layer.conv)
        elif kind == "DepthwiseConv2D":
            x = depthwise_conv2d(x, model.weights[layer.weight_names[0]], layer.conv)
        elif kind == "BatchNormalization":
            x = batchnorm_infer(x, _bn_params(model, layer))
        elif kind in ("ReLU6", "ReLU"):
            x = ACTIVATIONS["relu6" if kind == "ReLU6" else "relu"](x)
        elif kind == "GlobalAveragePooling":
            x = global_avg_pool(x)
        elif kind == "Dropout":
            x, _ = dropout(x, model.config.dropout_rate, rng, training)
        elif kind == "Dense":
            x = dense_forward(x, model.weights[layer.weight_names[0]],
                              model.weights[layer.weight_names[1]])
        elif kind == "Softmax":
            x = softmax(x)
        else:
            raise ValidationError(f"unknown layer kind {kind!r}")
    return x


def _check_batch(model: ModelGraph, batch: Tensor) -> None:
    s = model.config.input_size
    if batch.rank != 4 or batch.shape[1] != s or batch.shape[2] != s or batch.shape[3] != 3:
        raise ShapeError(f"expected batch shaped (N,{s},{s},3), got {batch.shape}")


def forward(model: ModelGraph, batch: Tensor, training: bool = False,
            rng: np.random.Generator | None = None) -> Tensor:
    """Full forward pass to class probabilities (rows sum to 1)."""
    _check_batch(model, batch)
    return _run_layers(model, batch, model.layers, training, rng)


def backbone_features(model: ModelGraph, batch: Tensor) -> Tensor:
    """Frozen-backbone features through global average pooling, (N, feature_width).

    Dropout sits after the pooling layer, so these can be cached and fed to
    head_forward during training without changing the training semantics.
    """
    _check_batch(model, batch)
    return _run_layers(model, batch, model.layers[: model.head_start], False, None)


def head_forward(model: ModelGraph, features: Tensor, training: bool = False,
                 rng: np.random.Generator | None = None) -> Tensor:
    return _run_layers(model, features, model.layers[model.head_start:], training, rng)


def set_trainable_boundary(model: ModelGraph, boundary: str) -> ModelGraph:
    """'head_only' marks the dense layer trainable; 'all_frozen' marks nothing."""
    if boundary == "head_only":
        idx = next(i for i, l in enumerate(model.layers) if l.kind == "Dense")
    elif boundary == "all_frozen":
        idx = len(model.layers)
    else:
        raise ValidationError("boundary must be 'head_only' or 'all_frozen'")
    return replace(model, trainable_boundary=idx)


def with_weights(model: ModelGraph, updates: dict[str, Tensor]) -> ModelGraph:
    """Replace named weights (shapes must match); shares the untouched tensors."""
    merged = dict(model.weights)
    for name, tensor in updates.items():
        if name not in merged:
            raise MissingWeightError(f"model has no weight named {name!r}")
        if merged[name].shape != tensor.shape:
            raise WeightShapeError(
                f"{name}: shape {tensor.shape} != expected {merged[name].shape}"
            )
        merged[name] = tensor
    return replace(model, weights=merged)


@dataclass(frozen=True)
class LayerSummary:
    name: str
    kind: str
    output_shape: tuple[int, ...]  # batch axis omitted
    param_count: int


@dataclass(frozen=True)
class ModelSummary:
    layers: tuple[LayerSummary, ...]
    total_params: int
    trainable_params: int
    kind_counts: dict[str, int]

    def render(self) -> str:
        width = max(len(l.name) for l in self.layers) + 2
        lines = [f"{'layer':<{width}}{'kind':<22}{'output shape':<18}{'params':>10}"]
        for l in self.layers:
            shape = "(" + ", ".join(str(e) for e in l.output_shape) + ")"
            lines.append(f"{l.name:<{width}}{l.kind:<22}{shape:<18}{l.param_count:>10}")
        lines.append(f"total params: {self.total_params}")
        lines.append(f"trainable params: {self.trainable_params}")
        lines.append("layer kinds: " + ", ".join(f"{k} x{v}" for k, v in self.kind_counts.items()))
        return "\n".join(lines)


def model_summary(model: ModelGraph) -> ModelSummary:
    """Per-layer shapes and parameter counts plus per-kind totals."""
    size = model.config.input_size
    shape: tuple[int, ...] = (size, size, 3)
    summaries = []
    kind_counts: dict[str, int] = {}
    trainable = set(model.trainable_weight_names())
    total = trainable_total = 0
    for layer in model.layers:
        params = sum(model.weights[n].size for n in layer.weight_names)
        if layer.kind in ("Conv2D", "DepthwiseConv2D"):
            k = model.weights[layer.weight_names[0]].shape
            sh, sw = layer.conv.stride
            h = conv_output_size(shape[0], k[0], sh, layer.conv.padding)
            w = conv_output_size(shape[1], k[1], sw, layer.conv.padding)
            c = k[3] if layer.kind == "Conv2D" else shape[2]
            shape = (h, w, c)
        elif layer.kind == "GlobalAveragePooling":
            shape = (shape[2],)
        elif layer.kind == "Dense":
            shape = (model.weights[layer.weight_names[0]].shape[1],)
        summaries.append(LayerSummary(layer.name, layer.kind, shape, params))
        kind_counts[layer.kind] = kind_counts.get(layer.kind, 0) + 1
        total += params
        trainable_total += sum(model.weights[n].size for n in layer.weight_names if n in trainable)
    return ModelSummary(tuple(summaries), total, trainable_total, kind_counts)


def _weight_order(model: ModelGraph) -> list[str]:
    names = []
    for layer in model.layers:
        names.extend(layer.weight_names)
    return names


def save_weights(model: ModelGraph, path: str | Path) -> None:
    """Write all weights to a DWSN file (see module docstring for the layout)."""
    records = []
    payload = bytearray()
    for name in _weight_order(model):
        t = model.weights[name]
        raw = t.array.astype("<f4", copy=False).tobytes()
        records.append(
            {
                "name": name,
                "dtype": "f32",
                "shape": list(t.shape),
                "offset": len(payload),
                "nbytes": len(raw),
            }
        )
        payload.extend(raw)
    header = json.dumps(records, separators=(",", ":")).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        fh.write(bytes(payload))


def _parse_container(blob: bytes) -> tuple[list, bytes]:
    if len(blob) < 16:
        raise WeightFormatError("file too short for a DWSN header")
    if blob[:4] != MAGIC:
        raise WeightFormatError(f"bad magic {blob[:4]!r}, expected {MAGIC!r}")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != VERSION:
        raise WeightFormatError(f"unsupported version {version}")
    (header_len,) = struct.unpack_from("<Q", blob, 8)
    if 16 + header_len > len(blob):
        raise TruncatedPayloadError("header extends past end of file")
    try:
        records = json.loads(blob[16 : 16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise WeightFormatError(f"unreadable header: {exc}") from None
    if not isinstance(records, list):
        raise WeightFormatError("header must be a list of tensor records")
    return records, blob[16 + header_len:]


def read_dwsn_header(path: str | Path) -> list:
    """Tensor records of a DWSN file, without touching the payload."""
    records, _ = _parse_container(Path(path).read_bytes())
    return records


def load_weights(path: str | Path, config: ModelConfig) -> ModelGraph:
    """Load a DWSN file into a fresh graph; every stored name/shape must match."""
    records, payload = _parse_container(Path(path).read_bytes())

    model = build_mobilenet(config, np.random.default_rng(0))
    expected = set(_weight_order(model))
    loaded: dict[str, Tensor] = {}
    for rec in records:
        try:
            name, dtype = rec["name"], rec["dtype"]
            shape = tuple(int(e) for e in rec["shape"])
            offset, nbytes = int(rec["offset"]), int(rec["nbytes"])
        except (TypeError, KeyError, ValueError) as exc:
            raise WeightFormatError(f"malformed tensor record: {exc}") from None
        if dtype != "f32":
            raise WeightFormatError(f"{name}: unsupported dtype {dtype!r}")
        if name not in expected:
            raise WeightFormatError(f"unexpected tensor {name!r} for this configuration")
        if shape != model.weights[name].shape:
            raise WeightShapeError(
                f"{name}: stored shape {shape} != expected {model.weights[name].shape}"
            )
        count = int(np.prod(shape))
        if nbytes != count * 4:
            raise WeightFormatError(f"{name}: nbytes {nbytes} != 4*{count}")
        if offset < 0 or offset + nbytes > len(payload):
            raise TruncatedPayloadError(
                f"{name}: payload range {offset}..{offset + nbytes} exceeds {len(payload)} bytes"
            )
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=offset).reshape(shape)
        try:
            loaded[name] = Tensor(arr.astype(np.float32))
        except ValidationError as exc:
            raise WeightFormatError(f"{name}: {exc}") from None
    missing = sorted(expected - set(loaded))
    if missing:
        raise MissingWeightError(f"file lacks required tensors: {', '.join(missing)}")
    return replace(model, weights=loaded)
