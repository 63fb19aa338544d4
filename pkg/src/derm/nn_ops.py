"""Forward (and head-only backward) primitives for the depthwise-separable CNN.

Conventions, fixed for the whole package:
  * activations and weights are float32 Tensors in N,H,W,C order;
  * conv weights are (Kh, Kw, Cin, Cout), depthwise weights (Kh, Kw, C);
  * "same" padding pads asymmetrically with the extra cell at the
    bottom/right when the total padding is odd, so stride-2 layers
    reproduce the ceil(in/stride) output sizes of the usual NHWC
    framework family;
  * dropout is inverted (survivors scaled by 1/(1-rate)) so inference
    is the exact identity.

Backward passes exist only for the classification head (masked features
-> dense -> softmax -> cross-entropy); the convolutional backbone is
inference-only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, ValidationError
from .tensor import Tensor

PROB_CLIP_FLOOR = 1e-7  # cross-entropy clip; keeps -log finite when p_true == 0


@dataclass(frozen=True)
class ConvParams:
    """Stride and padding for conv2d / depthwise_conv2d."""

    stride: tuple[int, int] = (1, 1)
    padding: str = "same"

    def __post_init__(self):
        s = self.stride
        if isinstance(s, int):
            s = (s, s)
        s = (int(s[0]), int(s[1]))
        if s[0] < 1 or s[1] < 1:
            raise ValidationError(f"stride must be positive, got {s}")
        if self.padding not in ("same", "valid"):
            raise ValidationError(f"padding must be 'same' or 'valid', got {self.padding!r}")
        object.__setattr__(self, "stride", s)


@dataclass(frozen=True)
class BatchNormParams:
    """Per-channel inference-mode batch normalization parameters."""

    gamma: np.ndarray
    beta: np.ndarray
    moving_mean: np.ndarray
    moving_variance: np.ndarray
    epsilon: float = 1e-3

    def __post_init__(self):
        vecs = {}
        for name in ("gamma", "beta", "moving_mean", "moving_variance"):
            v = np.ascontiguousarray(getattr(self, name), dtype=np.float32).reshape(-1)
            vecs[name] = v
            object.__setattr__(self, name, v)
        lengths = {v.size for v in vecs.values()}
        if len(lengths) != 1:
            raise ShapeError(f"batchnorm vectors disagree in length: {lengths}")
        if np.any(vecs["moving_variance"] < 0):
            raise ValidationError("moving_variance must be non-negative")
        if not self.epsilon > 0:
            raise ValidationError("epsilon must be positive")

    @property
    def channels(self) -> int:
        return int(self.gamma.size)


def _pad_amount(in_size: int, k: int, stride: int, padding: str) -> tuple[int, int]:
    if padding == "valid":
        return 0, 0
    out = -(-in_size // stride)
    total = max((out - 1) * stride + k - in_size, 0)
    lo = total // 2
    return lo, total - lo


def conv_output_size(in_size: int, k: int, stride: int, padding: str) -> int:
    if padding == "same":
        return -(-in_size // stride)
    out = (in_size - k) // stride + 1
    if out < 1:
        raise ShapeError(f"valid convolution of kernel {k} over extent {in_size} is empty")
    return out


def _windows(x: np.ndarray, kh: int, kw: int, params: ConvParams) -> np.ndarray:
    """im2col windows of shape (N, Ho, Wo, kh, kw, C)."""
    sh, sw = params.stride
    pt, pb = _pad_amount(x.shape[1], kh, sh, params.padding)
    pl, pr = _pad_amount(x.shape[2], kw, sw, params.padding)
    if pt or pb or pl or pr:
        x = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    if x.shape[1] < kh or x.shape[2] < kw:
        raise ShapeError(f"kernel ({kh},{kw}) larger than padded input {x.shape[1:3]}")
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(1, 2))
    win = win[:, ::sh, ::sw]  # (N, Ho, Wo, C, kh, kw)
    return np.transpose(win, (0, 1, 2, 4, 5, 3))


def conv2d(input: Tensor, weights: Tensor, bias: np.ndarray | None = None,
           params: ConvParams = ConvParams()) -> Tensor:
    """Standard cross-correlation of an NHWC batch with (Kh,Kw,Cin,Cout) weights."""
    x, w = input.array, weights.array
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d wants rank-4 input/weights, got {x.shape} and {w.shape}")
    kh, kw, cin, cout = w.shape
    if x.shape[3] != cin:
        raise ShapeError(f"input has {x.shape[3]} channels, weights expect {cin}")
    if bias is not None:
        bias = np.ascontiguousarray(bias, dtype=np.float32).reshape(-1)
        if bias.size != cout:
            raise ShapeError(f"bias length {bias.size} != output channels {cout}")
    if kh == 1 and kw == 1:
        sh, sw = params.stride
        y = x[:, ::sh, ::sw, :] @ w[0, 0]
    else:
        win = _windows(x, kh, kw, params)
        n, ho, wo = win.shape[:3]
        y = win.reshape(n * ho * wo, kh * kw * cin) @ w.reshape(kh * kw * cin, cout)
        y = y.reshape(n, ho, wo, cout)
    if bias is not None:
        y = y + bias
    return Tensor(y)


def depthwise_conv2d(input: Tensor, weights: Tensor,
                     params: ConvParams = ConvParams()) -> Tensor:
    """Per-channel spatial convolution; no cross-channel mixing."""
    x, w = input.array, weights.array
    if x.ndim != 4 or w.ndim != 3:
        raise ShapeError(f"depthwise wants rank-4 input and rank-3 weights, got {x.shape} and {w.shape}")
    kh, kw, c = w.shape
    if x.shape[3] != c:
        raise ShapeError(f"input has {x.shape[3]} channels, weights expect {c}")
    win = _windows(x, kh, kw, params)  # (N, Ho, Wo, kh, kw, C)
    y = np.einsum("nhwijc,ijc->nhwc", win, w, optimize=True)
    return Tensor(np.ascontiguousarray(y, dtype=np.float32))


def batchnorm_infer(input: Tensor, p: BatchNormParams) -> Tensor:
    """gamma*(x - mean)/sqrt(var + eps) + beta over the channel axis."""
    x = input.array
    if x.shape[-1] != p.channels:
        raise ShapeError(f"input has {x.shape[-1]} channels, batchnorm expects {p.channels}")
    scale = p.gamma / np.sqrt(p.moving_variance + np.float32(p.epsilon))
    shift = p.beta - p.moving_mean * scale
    return Tensor(x * scale + shift)


def activation_relu6(input: Tensor) -> Tensor:
    return Tensor(np.minimum(np.maximum(input.array, np.float32(0)), np.float32(6)))


def activation_relu(input: Tensor) -> Tensor:
    return Tensor(np.maximum(input.array, np.float32(0)))


ACTIVATIONS = {"relu6": activation_relu6, "relu": activation_relu}


def global_avg_pool(input: Tensor) -> Tensor:
    """(N,H,W,C) -> (N,C) spatial mean."""
    if input.rank != 4:
        raise ShapeError(f"global_avg_pool wants rank-4 input, got {input.shape}")
    return Tensor(input.array.mean(axis=(1, 2), dtype=np.float32))


def dense_forward(input: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """(N,Cin) @ (Cin,Cout) + (Cout,)."""
    x, w, bias = input.array, W.array, b.array
    if x.ndim != 2 or w.ndim != 2 or bias.ndim != 1:
        raise ShapeError("dense_forward wants (N,Cin), (Cin,Cout), (Cout,)")
    if x.shape[1] != w.shape[0] or bias.size != w.shape[1]:
        raise ShapeError(f"dense shapes inconsistent: {x.shape} @ {w.shape} + {bias.shape}")
    return Tensor(x @ w + bias)


def dropout(input: Tensor, rate: float, rng: np.random.Generator | None = None,
            training: bool = False) -> tuple[Tensor, Tensor]:
    """Inverted dropout. Returns (output, mask); inference is the exact identity."""
    if not 0.0 <= rate < 1.0:
        raise ValidationError(f"dropout rate must be in [0,1), got {rate}")
    if not training or rate == 0.0:
        return input, Tensor(np.ones(input.shape, dtype=np.float32))
    if rng is None:
        raise ValidationError("training-mode dropout needs a seeded generator")
    keep = rng.random(input.shape) >= rate
    mask = keep.astype(np.float32) / np.float32(1.0 - rate)
    return Tensor(input.array * mask), Tensor(mask)


def softmax(logits: Tensor) -> Tensor:
    """Max-shifted row softmax; rows sum to 1."""
    z = logits.array
    if z.ndim != 2:
        raise ShapeError(f"softmax wants (N,K) logits, got {z.shape}")
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return Tensor(e / e.sum(axis=1, keepdims=True))


def _check_one_hot(targets: np.ndarray, n: int, k: int) -> None:
    if targets.shape != (n, k):
        raise ShapeError(f"targets shape {targets.shape} != {(n, k)}")
    if not np.all((targets == 0) | (targets == 1)) or not np.all(targets.sum(axis=1) == 1):
        raise ValidationError("targets must be one-hot rows")


def cross_entropy_loss(probs: Tensor, targets: Tensor | np.ndarray) -> float:
    """Mean -log(p_true), probabilities clipped to [1e-7, 1]."""
    p = probs.array
    y = targets.array if isinstance(targets, Tensor) else np.asarray(targets)
    if p.ndim != 2:
        raise ShapeError(f"probs must be (N,K), got {p.shape}")
    _check_one_hot(y, *p.shape)
    if np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-5):
        raise ValidationError("probability rows must sum to 1 within 1e-5")
    p_true = (p * y).sum(axis=1).astype(np.float64)
    return float(-np.log(np.clip(p_true, PROB_CLIP_FLOOR, 1.0)).mean())


def head_gradients(features: Tensor, mask: Tensor, W: Tensor, b: Tensor,
                   targets: Tensor | np.ndarray) -> tuple[Tensor, Tensor, float]:
    """Loss and gradients of softmax cross-entropy w.r.t. the dense head.

    With x = features*mask, p = softmax(xW + b) and residual r = (p - y)/N:
    dW = x^T r and db = column sums of r.
    """
    if mask.shape != features.shape:
        raise ShapeError(f"mask shape {mask.shape} != features shape {features.shape}")
    x = features.array * mask.array
    z = dense_forward(Tensor(x), W, b)
    p = softmax(z)
    y = targets.array if isinstance(targets, Tensor) else np.asarray(targets, dtype=np.float32)
    _check_one_hot(y, *p.shape)
    n = x.shape[0]
    loss = float(-np.log(np.clip((p.array * y).sum(axis=1).astype(np.float64),
                                 PROB_CLIP_FLOOR, 1.0)).mean())
    r = (p.array - y.astype(np.float32)) / np.float32(n)
    dw = x.T @ r
    db = r.sum(axis=0)
    return Tensor(dw), Tensor(db), loss
