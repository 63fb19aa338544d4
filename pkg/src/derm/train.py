"""Transfer-learning loop for the classification head.

The backbone is frozen, so its pooled features are computed once and
cached; dropout sits after the pooling layer, which makes training on
cached features exactly equivalent to running the full graph with
dropout active. Adam moments are kept in float64 for numerical fidelity
of the bias correction; parameters stay float32.

Everything is driven by one seeded generator (shuffle order, then the
per-batch dropout masks), so a (weights, data, config) triple fixes every
logged number.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .metrics import (
    ClassReport,
    ConfusionMatrix,
    class_report,
    confusion_matrix,
    top_k_accuracy,
)
from .model import ModelGraph, backbone_features, forward, with_weights
from .nn_ops import PROB_CLIP_FLOOR, dropout, head_gradients, softmax
from .tensor import Tensor

FEATURE_CHUNK = 32  # images per backbone pass; bounds peak memory


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 10
    epochs: int = 50
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-7
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValidationError("batch_size must be at least 1")
        if self.epochs < 0:
            raise ValidationError("epochs must be non-negative")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ValidationError("adam betas must lie in [0, 1)")
        if not self.adam_epsilon > 0:
            raise ValidationError("adam_epsilon must be positive")
        if not self.learning_rate > 0:
            raise ValidationError("learning_rate must be positive")


@dataclass(frozen=True)
class AdamState:
    """First/second moment buffers (float64) and the step counter."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0

    def __post_init__(self):
        if self.m.shape != self.v.shape:
            raise ValidationError("moment buffers must share a shape")
        if self.t < 0:
            raise ValidationError("step counter must be non-negative")


def init_adam_state(shape: tuple[int, ...]) -> AdamState:
    return AdamState(m=np.zeros(shape), v=np.zeros(shape), t=0)


def bias_corrected(state: AdamState, config: TrainConfig) -> tuple[np.ndarray, np.ndarray]:
    m_hat = state.m / (1.0 - config.adam_beta1 ** state.t)
    v_hat = state.v / (1.0 - config.adam_beta2 ** state.t)
    return m_hat, v_hat


def adam_step(param: Tensor, grad: Tensor, state: AdamState,
              config: TrainConfig) -> tuple[Tensor, AdamState]:
    """One Adam update; returns the new parameter tensor and state."""
    if param.shape != grad.shape or param.shape != state.m.shape:
        raise ValidationError("param, grad and state shapes must agree")
    g = grad.array.astype(np.float64)
    state = AdamState(
        m=config.adam_beta1 * state.m + (1.0 - config.adam_beta1) * g,
        v=config.adam_beta2 * state.v + (1.0 - config.adam_beta2) * g * g,
        t=state.t + 1,
    )
    m_hat, v_hat = bias_corrected(state, config)
    theta = param.array.astype(np.float64) - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_epsilon)
    return Tensor(theta.astype(np.float32)), state


@dataclass(frozen=True)
class ArrayDataset:
    """Preprocessed images (N,H,W,3 float32 in [-1,1]) with integer labels."""

    images: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        imgs = np.asarray(self.images, dtype=np.float32)
        labels = np.asarray(self.labels, dtype=np.int64)
        if imgs.ndim != 4 or imgs.shape[3] != 3:
            raise ValidationError(f"images must be (N,H,W,3), got {imgs.shape}")
        if labels.shape != (imgs.shape[0],):
            raise ValidationError("one label per image required")
        object.__setattr__(self, "images", imgs)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return int(self.images.shape[0])


@dataclass(frozen=True)
class EpochLog:
    epoch: int
    train_loss: float
    train_acc: float
    train_top2: float
    train_top3: float
    val_loss: float
    val_acc: float
    val_top2: float
    val_top3: float


HISTORY_COLUMNS = (
    "epoch", "train_loss", "train_acc", "train_top2", "train_top3",
    "val_loss", "val_acc", "val_top2", "val_top3",
)


def write_history_csv(logs: Sequence[EpochLog], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(HISTORY_COLUMNS)
        for log in logs:
            writer.writerow([log.epoch] + [repr(getattr(log, c)) for c in HISTORY_COLUMNS[1:]])


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValidationError(f"labels must lie in [0, {num_classes})")
    y = np.zeros((labels.size, num_classes), dtype=np.float32)
    y[np.arange(labels.size), labels] = 1.0
    return y


def extract_features(model: ModelGraph, dataset: ArrayDataset) -> np.ndarray:
    """Frozen-backbone pooled features, computed in chunks."""
    chunks = []
    for start in range(0, len(dataset), FEATURE_CHUNK):
        batch = Tensor(dataset.images[start : start + FEATURE_CHUNK])
        chunks.append(backbone_features(model, batch).array)
    return np.concatenate(chunks, axis=0)


def _head_metrics(features: np.ndarray, labels: np.ndarray, w: Tensor, b: Tensor,
                  num_classes: int) -> tuple[float, float, float, float]:
    probs = softmax(Tensor(features @ w.array + b.array)).array
    p_true = (probs * one_hot(labels, num_classes)).sum(axis=1).astype(np.float64)
    loss = float(-np.log(np.clip(p_true, PROB_CLIP_FLOOR, 1.0)).mean())
    return (
        loss,
        top_k_accuracy(probs, labels, 1),
        top_k_accuracy(probs, labels, min(2, num_classes)),
        top_k_accuracy(probs, labels, min(3, num_classes)),
    )


def train_head(model: ModelGraph, train_set: ArrayDataset, val_set: ArrayDataset,
               config: TrainConfig) -> tuple[ModelGraph, list[EpochLog]]:
    """Adam-train the dense head on frozen features; one EpochLog per epoch.

    Shuffles per epoch, keeps the final partial batch, and evaluates both
    sets in inference mode after every epoch.
    """
    if model.trainable_weight_names() != ("head/dense/kernel", "head/dense/bias"):
        raise ValidationError("train_head needs a model with the head_only boundary")
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValidationError("datasets must be non-empty")
    k = model.config.num_classes
    if train_set.labels.max() >= k or val_set.labels.max() >= k:
        raise ValidationError(f"labels must lie in [0, {k})")

    train_features = extract_features(model, train_set)
    val_features = extract_features(model, val_set)
    rng = np.random.default_rng(config.seed)
    w = model.weights["head/dense/kernel"]
    b = model.weights["head/dense/bias"]
    w_state = init_adam_state(w.shape)
    b_state = init_adam_state(b.shape)
    n = len(train_set)
    logs: list[EpochLog] = []

    for epoch in range(config.epochs):
        order = rng.permutation(n) if config.shuffle else np.arange(n)
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            feats = Tensor(train_features[idx])
            targets = one_hot(train_set.labels[idx], k)
            _, mask = dropout(feats, model.config.dropout_rate, rng, training=True)
            dw, db, _ = head_gradients(feats, mask, w, b, targets)
            w, w_state = adam_step(w, dw, w_state, config)
            b, b_state = adam_step(b, db, b_state, config)
        tr = _head_metrics(train_features, train_set.labels, w, b, k)
        va = _head_metrics(val_features, val_set.labels, w, b, k)
        logs.append(EpochLog(epoch, *tr, *va))

    trained = with_weights(model, {"head/dense/kernel": w, "head/dense/bias": b})
    return trained, logs


@dataclass(frozen=True)
class EvalResult:
    confusion: ConfusionMatrix
    report: ClassReport
    accuracy: float
    top2: float
    top3: float
    mean_loss: float


def predict_probabilities(model: ModelGraph, dataset: ArrayDataset) -> np.ndarray:
    """Inference-mode class probabilities for every image, chunked."""
    chunks = []
    for start in range(0, len(dataset), FEATURE_CHUNK):
        batch = Tensor(dataset.images[start : start + FEATURE_CHUNK])
        chunks.append(forward(model, batch).array)
    return np.concatenate(chunks, axis=0)


def evaluate(model: ModelGraph, dataset: ArrayDataset) -> EvalResult:
    """Run inference and assemble the full metrics bundle."""
    if len(dataset) == 0:
        raise ValidationError("cannot evaluate an empty dataset")
    k = model.config.num_classes
    if dataset.labels.max() >= k:
        raise ValidationError(f"labels must lie in [0, {k})")
    probs = predict_probabilities(model, dataset)
    preds = probs.argmax(axis=1)
    cm = confusion_matrix(dataset.labels, preds, k)
    report = class_report(cm, model.labels.display_names)
    p_true = (probs * one_hot(dataset.labels, k)).sum(axis=1).astype(np.float64)
    mean_loss = float(-np.log(np.clip(p_true, PROB_CLIP_FLOOR, 1.0)).mean())
    return EvalResult(
        confusion=cm,
        report=report,
        accuracy=top_k_accuracy(probs, dataset.labels, 1),
        top2=top_k_accuracy(probs, dataset.labels, min(2, k)),
        top3=top_k_accuracy(probs, dataset.labels, min(3, k)),
        mean_loss=mean_loss,
    )
