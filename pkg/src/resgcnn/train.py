"""Mini-batch training with Adam, data splits and learning curves."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .graph import GraphSample, scaled_laplacian_from_adjacency
from .layers import softmax, softmax_cross_entropy, softmax_cross_entropy_backward
from .model import (
    ForwardTrace,
    ModelParams,
    backward,
    extract_features,
    forward_batch,
    head_backward,
    head_forward,
)

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 64
    max_epochs: int = 120
    folds: int = 5
    correlation_threshold: float = 0.2
    window_length: int = 128
    overlap_fraction: float = 0.5
    seed: int = 0
    # None defers to the model's own flag (set by block import)
    freeze_blocks: bool | None = None
    train_fraction: float = 0.05
    test_fraction: float = 0.8
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    patience: int = 10
    min_improvement: float = 1e-5
    lambda_mode: str = "bound"
    absolute_threshold: bool = False

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 < self.overlap_fraction < 1.0:
            raise ValueError("overlap_fraction must lie in (0, 1)")
        if self.train_fraction + self.test_fraction > 1.0 + 1e-12:
            raise ValueError("train_fraction + test_fraction must not exceed 1")
        if self.batch_size < 1 or self.max_epochs < 0:
            raise ValueError("batch_size must be >= 1 and max_epochs >= 0")
        if self.lambda_mode not in ("bound", "exact"):
            raise ValueError("lambda_mode must be 'bound' or 'exact'")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


# --- Adam ----------------------------------------------------------------------------------

@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
              lr: float = 0.001, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
              frozen: frozenset[str] | set[str] = frozenset()) -> AdamState:
    """Bias-corrected Adam, updating ``params`` in place.

    Tensors named in ``frozen`` (or without a gradient) are left alone.
    """
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for name, p in params.items():
        if name in frozen or name not in grads:
            continue
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= (lr / bc1) * m / (np.sqrt(v / bc2) + eps)
    return state


# --- encoded datasets -------------------------------------------------------------------------

@dataclass
class EncodedSet:
    """Graph samples turned into arrays the network consumes directly."""

    x: list[np.ndarray]
    ltilde: list[np.ndarray]
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)

    def groups(self, indices) -> list[tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]]:
        """Split ``indices`` by node count; returns ``(positions, X, L, y)`` per group."""
        by_n: dict[int, list[int]] = {}
        for pos, i in enumerate(indices):
            by_n.setdefault(self.x[i].shape[0], []).append(pos)
        out = []
        for n in sorted(by_n):
            pos = np.array(by_n[n])
            idx = np.asarray(indices)[pos]
            out.append((pos, np.stack([self.x[i] for i in idx]), np.stack([self.ltilde[i] for i in idx]),
                        self.labels[idx]))
        return out


def encode(samples: Sequence[GraphSample], lambda_mode: str = "bound") -> EncodedSet:
    return EncodedSet([s.node_features for s in samples],
                      [scaled_laplacian_from_adjacency(s.adjacency, lambda_mode) for s in samples],
                      np.array([s.label for s in samples], dtype=np.int64))


def encode_windows(windows, standardizer, config: "TrainConfig") -> EncodedSet:
    """Sensor windows to network inputs using the config's graph settings."""
    from .data.windows import to_graph_sample

    return encode([to_graph_sample(w, config.correlation_threshold, standardizer, config.absolute_threshold)
                   for w in windows], config.lambda_mode)


def _batches(n: int, size: int):
    for start in range(0, n, size):
        yield start, min(start + size, n)


def pooled_features(params: ModelParams, data: EncodedSet, chunk: int = 64) -> np.ndarray:
    """Block output of every sample, mean-pooled: ``(M, F)``."""
    out = np.empty((len(data), params.arch.input_width))
    for a, b in _batches(len(data), chunk):
        for pos, x, lt, _ in data.groups(np.arange(a, b)):
            out[a + pos] = extract_features(params, x, lt)
    return out


def predict_proba(params: ModelParams, data: EncodedSet, chunk: int = 64) -> np.ndarray:
    out = np.empty((len(data), params.num_classes))
    for a, b in _batches(len(data), chunk):
        for pos, x, lt, _ in data.groups(np.arange(a, b)):
            out[a + pos], _ = forward_batch(params, x, lt, keep_trace=False)
    return out


def predict(params: ModelParams, data: EncodedSet) -> np.ndarray:
    # argmax returns the lowest index among ties
    return np.argmax(predict_proba(params, data), axis=1)


def _head_probs(params: ModelParams, pooled: np.ndarray) -> np.ndarray:
    return softmax(head_forward(params, pooled))


def accuracy(pred, labels) -> float:
    labels = np.asarray(labels)
    return 100.0 * float(np.mean(np.asarray(pred) == labels)) if len(labels) else float("nan")


# --- learning curve ------------------------------------------------------------------------------

@dataclass
class LearningCurve:
    """Per-epoch mean training loss and test accuracy (percent).

    Entry ``e`` is recorded after epoch ``e`` has been trained, so the
    first entry already reflects one pass over the data. The accuracy of
    the untouched model is kept separately in ``initial_accuracy``.
    """

    train_loss: list[float] = field(default_factory=list)
    test_accuracy: list[float] = field(default_factory=list)
    initial_accuracy: float | None = None
    stopped_early: bool = False

    def __len__(self) -> int:
        return len(self.train_loss)

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, delimiter="\t", lineterminator="\n")
            w.writerow(["epoch", "train_loss", "test_accuracy"])
            for e, (loss, acc) in enumerate(zip(self.train_loss, self.test_accuracy)):
                w.writerow([e, repr(float(loss)), repr(float(acc))])
        return path

    @classmethod
    def read(cls, path) -> "LearningCurve":
        curve = cls()
        with Path(path).open() as fh:
            rows = list(csv.reader(fh, delimiter="\t"))
        for row in rows[1:]:
            curve.train_loss.append(float(row[1]))
            curve.test_accuracy.append(float(row[2]))
        return curve


# --- training ------------------------------------------------------------------------------------

def _is_frozen(params: ModelParams, config: TrainConfig) -> bool:
    return params.frozen_blocks if config.freeze_blocks is None else bool(config.freeze_blocks)


def train(model: ModelParams, train_set: Sequence[GraphSample] | EncodedSet, config: TrainConfig,
          test_set: Sequence[GraphSample] | EncodedSet | None = None,
          on_epoch: Callable[[int, float, float], None] | None = None) -> tuple[ModelParams, LearningCurve]:
    """Train a copy of ``model``; the argument is left untouched.

    Stops after ``max_epochs`` or once the epoch-mean loss has improved by
    less than ``min_improvement`` for ``patience`` epochs in a row.
    Identical inputs give bitwise identical results.
    """
    train_data = train_set if isinstance(train_set, EncodedSet) else encode(train_set, config.lambda_mode)
    test_data = None
    if test_set is not None:
        test_data = test_set if isinstance(test_set, EncodedSet) else encode(test_set, config.lambda_mode)
    if len(train_data) == 0:
        raise ValueError("training set is empty")
    if train_data.labels.max() >= model.num_classes or (test_data is not None and len(test_data)
                                                        and test_data.labels.max() >= model.num_classes):
        raise ValueError(f"labels exceed the model's {model.num_classes} classes")

    params = model.copy()
    frozen = _is_frozen(params, config)
    params.frozen_blocks = frozen
    tensors = params.head_tensors() if frozen else params.tensors()
    state = AdamState()
    rng = np.random.default_rng(config.seed)
    curve = LearningCurve()

    if frozen:
        # blocks are constant, so their pooled output is computed once
        train_feats = pooled_features(params, train_data)
        test_feats = pooled_features(params, test_data) if test_data is not None else None

        def evaluate() -> float:
            if test_feats is None:
                return float("nan")
            return accuracy(np.argmax(_head_probs(params, test_feats), axis=1), test_data.labels)
    else:
        def evaluate() -> float:
            return accuracy(predict(params, test_data), test_data.labels) if test_data is not None else float("nan")

    curve.initial_accuracy = evaluate()
    best = math.inf
    stall = 0
    n = len(train_data)
    for epoch in range(config.max_epochs):
        order = rng.permutation(n)
        losses = []
        for b, (a, z) in enumerate(_batches(n, config.batch_size)):
            idx = order[a:z]
            if frozen:
                loss, grads = _head_step(params, train_feats[idx], train_data.labels[idx])
            else:
                loss, grads = _full_step(params, train_data, idx)
            if not math.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, batch {b}")
            adam_step(tensors, grads, state, config.learning_rate, config.adam_beta1, config.adam_beta2,
                      config.adam_epsilon)
            losses.append(loss * len(idx))
        epoch_loss = float(np.sum(losses) / n)
        acc = evaluate()
        curve.train_loss.append(epoch_loss)
        curve.test_accuracy.append(acc)
        log.info("epoch %d loss %.6f test acc %.2f", epoch, epoch_loss, acc)
        if on_epoch is not None:
            on_epoch(epoch, epoch_loss, acc)
        if best - epoch_loss < config.min_improvement:
            stall += 1
        else:
            stall = 0
        best = min(best, epoch_loss)
        if stall >= config.patience:
            curve.stopped_early = True
            break
    return params, curve


def _head_step(params: ModelParams, pooled: np.ndarray, labels: np.ndarray):
    trace = ForwardTrace()
    logits = head_forward(params, pooled, trace)
    loss, probs = softmax_cross_entropy(logits, labels)
    grads: dict[str, np.ndarray] = {}
    head_backward(params, trace, softmax_cross_entropy_backward(probs, labels), grads)
    return loss, grads


def _full_step(params: ModelParams, data: EncodedSet, idx: np.ndarray):
    total = len(idx)
    loss_sum = 0.0
    grads: dict[str, np.ndarray] | None = None
    for _, x, lt, y in data.groups(idx):
        probs, trace = forward_batch(params, x, lt)
        loss, _ = _ce(probs, y)
        loss_sum += loss * len(y)
        # gradient of the mean over the whole batch
        g_logits = softmax_cross_entropy_backward(probs, y) * (len(y) / total)
        g = backward(params, trace, g_logits)
        g.pop("input", None)
        if grads is None:
            grads = g
        else:
            for k in grads:
                grads[k] += g[k]
    return loss_sum / total, grads


def _ce(probs, labels):
    p = probs[np.arange(len(labels)), labels]
    with np.errstate(divide="ignore"):
        return float(-np.mean(np.log(p))), probs


# --- splits --------------------------------------------------------------------------------------

def kfold_split(n: int, folds: int = 5, seed: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    """Seeded shuffle into ``folds`` disjoint test parts (sizes differ by at most one)."""
    if folds < 2:
        raise ValueError("folds must be >= 2")
    if n < folds:
        raise ValueError(f"cannot split {n} samples into {folds} folds")
    perm = np.random.default_rng(seed).permutation(n)
    parts = np.array_split(perm, folds)
    out = []
    for i, test in enumerate(parts):
        train = np.concatenate([p for j, p in enumerate(parts) if j != i])
        out.append((np.sort(train), np.sort(test)))
    return out


def fewshot_split(labels, train_fraction: float = 0.05, test_fraction: float = 0.8, seed: int = 0,
                  num_classes: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Stratified few-shot split.

    Each class contributes ``ceil(train_fraction * count)`` training
    samples; the test set is drawn from the remainder to reach
    ``test_fraction`` of the whole dataset.
    """
    labels = np.asarray(labels)
    if not (0 < train_fraction < 1 and 0 < test_fraction < 1 and train_fraction + test_fraction <= 1 + 1e-12):
        raise ValueError("invalid train/test fractions")
    classes = range(num_classes) if num_classes is not None else np.unique(labels)
    rng = np.random.default_rng(seed)
    train, rest = [], []
    for c in classes:
        idx = np.flatnonzero(labels == c)
        if idx.size == 0:
            raise ValueError(f"class {c} has no samples")
        idx = rng.permutation(idx)
        k = math.ceil(train_fraction * idx.size - 1e-9)
        train.append(idx[:k])
        rest.append(idx[k:])
    pool = rng.permutation(np.concatenate(rest))
    n_test = min(int(round(test_fraction * labels.size)), pool.size)
    return np.sort(np.concatenate(train)), np.sort(pool[:n_test])
