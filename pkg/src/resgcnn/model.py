"""The residual Chebyshev graph network.

Four residual blocks of four ChebNet layers (Chebyshev convolution,
GraphNorm, Leaky ReLU), an inter-block residual sum, mean pooling over
nodes, a 128->64 dense layer and a softmax head.

Parameters never depend on the node count, so one model accepts graphs
of any size. Batches are ``(B, N, F)`` node features with matching
``(B, N, N)`` scaled Laplacians.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import archive
from .graph import GraphSample, scaled_laplacian_from_adjacency
from .layers import (
    ChebConvParams,
    DenseParams,
    GraphNormParams,
    chebconv_backward,
    chebconv_layer_forward,
    dense_backward,
    dense_forward,
    graphnorm_backward,
    graphnorm_forward,
    leaky_relu,
    leaky_relu_backward,
    mean_pool,
    mean_pool_backward,
    softmax,
)

BLOCK_ARCHIVE_VERSION = 1


@dataclass(frozen=True)
class Architecture:
    """Layer widths. The default is the published 4x4 layout."""

    input_width: int = 128
    layers: tuple[tuple[int, int], ...] = ((256, 2), (512, 3), (256, 3), (128, 2))
    num_blocks: int = 4
    fc_width: int = 64

    def __post_init__(self):
        if self.layers[-1][0] != self.input_width:
            raise ValueError("the last layer of a block must return to the input width")
        if any(k < 1 for _, k in self.layers):
            raise ValueError("Chebyshev order must be >= 1")

    def layer_shapes(self) -> list[tuple[int, int, int]]:
        """``(K, F_in, F_out)`` for every layer of one block."""
        shapes, f_in = [], self.input_width
        for f_out, k in self.layers:
            shapes.append((k, f_in, f_out))
            f_in = f_out
        return shapes

    def to_dict(self) -> dict:
        return {"input_width": self.input_width, "layers": [list(t) for t in self.layers],
                "num_blocks": self.num_blocks, "fc_width": self.fc_width}

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        return cls(d["input_width"], tuple(tuple(t) for t in d["layers"]), d["num_blocks"], d["fc_width"])


DEFAULT_ARCHITECTURE = Architecture()


@dataclass
class ChebNetLayer:
    conv: ChebConvParams
    norm: GraphNormParams


@dataclass
class ModelParams:
    arch: Architecture
    num_classes: int
    blocks: list[list[ChebNetLayer]]
    fc: DenseParams
    head: DenseParams
    frozen_blocks: bool = False
    meta: dict = field(default_factory=dict)

    def block_tensors(self) -> dict[str, np.ndarray]:
        out = {}
        for b, block in enumerate(self.blocks):
            for i, layer in enumerate(block):
                p = f"blocks.{b}.{i}."
                out[p + "theta"] = layer.conv.theta
                out[p + "alpha"] = layer.norm.alpha
                out[p + "gamma"] = layer.norm.gamma
                out[p + "beta"] = layer.norm.beta
        return out

    def head_tensors(self) -> dict[str, np.ndarray]:
        return {"fc.weight": self.fc.weight, "fc.bias": self.fc.bias,
                "head.weight": self.head.weight, "head.bias": self.head.bias}

    def tensors(self) -> dict[str, np.ndarray]:
        """Every learnable array by name. The arrays are live views."""
        out = self.block_tensors()
        out.update(self.head_tensors())
        return out

    def copy(self) -> "ModelParams":
        return copy.deepcopy(self)

    def astype(self, dtype) -> "ModelParams":
        """Deep copy with every tensor cast to ``dtype``."""
        out = self.copy()
        for block in out.blocks:
            for layer in block:
                layer.conv.theta = layer.conv.theta.astype(dtype)
                for attr in ("alpha", "gamma", "beta"):
                    setattr(layer.norm, attr, getattr(layer.norm, attr).astype(dtype))
        for dense in (out.fc, out.head):
            dense.weight = dense.weight.astype(dtype)
            dense.bias = dense.bias.astype(dtype)
        return out

    @property
    def num_parameters(self) -> int:
        return sum(a.size for a in self.tensors().values())


def _glorot(rng, shape, fan_in, fan_out):
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


def _init_head(rng, arch: Architecture, num_classes: int) -> tuple[DenseParams, DenseParams]:
    fc = DenseParams(_glorot(rng, (arch.input_width, arch.fc_width), arch.input_width, arch.fc_width),
                     np.zeros(arch.fc_width))
    # the classifier starts at zero so untrained predictions are uniform
    head = DenseParams(np.zeros((arch.fc_width, num_classes)), np.zeros(num_classes))
    return fc, head


def _head_rng(seed: int):
    # separate stream so a scratch model and an imported one share head init
    return np.random.default_rng([seed, 1])


def build_model(num_classes: int, seed: int = 0, arch: Architecture = DEFAULT_ARCHITECTURE) -> ModelParams:
    """Seeded Glorot-uniform initialization.

    GraphNorm starts as the identity affine and the softmax layer at zero,
    so an untrained model predicts the uniform distribution.
    """
    if num_classes < 2:
        raise ValueError("num_classes must be >= 2")
    rng = np.random.default_rng(seed)
    blocks = []
    for _ in range(arch.num_blocks):
        block = []
        for k, f_in, f_out in arch.layer_shapes():
            theta = _glorot(rng, (k, f_in, f_out), k * f_in, f_out)
            block.append(ChebNetLayer(ChebConvParams(theta), GraphNormParams.identity(f_out)))
        blocks.append(block)
    fc, head = _init_head(_head_rng(seed), arch, num_classes)
    return ModelParams(arch, num_classes, blocks, fc, head)


# --- forward / backward ------------------------------------------------------------

@dataclass
class ForwardTrace:
    block_caches: list = field(default_factory=list)
    num_nodes: int = 0
    pooled: np.ndarray | None = None
    fc_pre: np.ndarray | None = None
    fc_act: np.ndarray | None = None
    probs: np.ndarray | None = None


def _block_forward(block: list[ChebNetLayer], ltilde, x):
    h = x
    caches = []
    for layer in block:
        z, conv_cache = chebconv_layer_forward(ltilde, h, layer.conv)
        n, norm_cache = graphnorm_forward(z, layer.norm)
        h = leaky_relu(n)
        caches.append((conv_cache, norm_cache, n))
    return x + h, caches


def _block_backward(block: list[ChebNetLayer], caches, grad_out, grads: dict | None, prefix: str):
    g = grad_out
    for i in range(len(block) - 1, -1, -1):
        conv_cache, norm_cache, n = caches[i]
        g = leaky_relu_backward(g, n)
        g, d_alpha, d_gamma, d_beta = graphnorm_backward(g, norm_cache)
        g, d_theta = chebconv_backward(g, conv_cache)
        if grads is not None:
            p = f"{prefix}{i}."
            grads[p + "theta"] = d_theta
            grads[p + "alpha"] = d_alpha
            grads[p + "gamma"] = d_gamma
            grads[p + "beta"] = d_beta
    return g


def _check_features(params: ModelParams, x):
    if x.shape[-1] != params.arch.input_width:
        raise ValueError(f"node feature width {x.shape[-1]} != model input width {params.arch.input_width}")


def extract_features(params: ModelParams, x, ltilde, trace: ForwardTrace | None = None) -> np.ndarray:
    """Residual blocks followed by node mean pooling: ``(B, N, F) -> (B, F)``."""
    x = np.asarray(x)
    if not np.issubdtype(x.dtype, np.floating):
        x = x.astype(np.float64)
    _check_features(params, x)
    total = x
    h = x
    for block in params.blocks:
        h, caches = _block_forward(block, ltilde, h)
        total = total + h
        if trace is not None:
            trace.block_caches.append(caches)
    # ``total`` now holds in_1 + out_1 + ... + out_4 = in_1 + ... + in_4 + out_4
    if trace is not None:
        trace.num_nodes = x.shape[-2]
    pooled = mean_pool(total)
    if not np.all(np.isfinite(pooled)):
        raise FloatingPointError("non-finite block features (training diverged?)")
    return pooled


def head_forward(params: ModelParams, pooled, trace: ForwardTrace | None = None) -> np.ndarray:
    """Dense + Leaky ReLU + head. Returns logits."""
    fc_pre = dense_forward(pooled, params.fc)
    fc_act = leaky_relu(fc_pre)
    logits = dense_forward(fc_act, params.head)
    if trace is not None:
        trace.pooled, trace.fc_pre, trace.fc_act = pooled, fc_pre, fc_act
    return logits


def forward_batch(params: ModelParams, x, ltilde, keep_trace: bool = True):
    """Returns ``(probabilities (B, C), trace)`` for a stacked batch."""
    trace = ForwardTrace() if keep_trace else None
    pooled = extract_features(params, x, ltilde, trace)
    logits = head_forward(params, pooled, trace)
    probs = softmax(logits)
    if not np.all(np.isfinite(probs)):
        raise FloatingPointError("non-finite probabilities (training diverged?)")
    if trace is not None:
        trace.probs = probs
    return probs, trace


def head_backward(params: ModelParams, trace: ForwardTrace, grad_logits, grads: dict) -> np.ndarray:
    g_act, grads["head.weight"], grads["head.bias"] = dense_backward(grad_logits, trace.fc_act, params.head)
    g_pre = leaky_relu_backward(g_act, trace.fc_pre)
    g_pooled, grads["fc.weight"], grads["fc.bias"] = dense_backward(g_pre, trace.pooled, params.fc)
    return g_pooled


def backward(params: ModelParams, trace: ForwardTrace, grad_logits, blocks: bool = True) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss for every tensor given ``dLoss/dlogits``.

    With ``blocks=False`` only the dense layers are differentiated. The
    returned dict also carries ``"input"``, the gradient with respect to
    the node features, when ``blocks`` is true.
    """
    if trace is None or trace.pooled is None:
        raise RuntimeError("backward called before forward")
    grads: dict[str, np.ndarray] = {}
    g_pooled = head_backward(params, trace, grad_logits, grads)
    if not blocks:
        return grads
    g_total = mean_pool_backward(g_pooled, trace.num_nodes)
    # every block input and the last block output receive g_total directly
    g_out = g_total
    for b in range(len(params.blocks) - 1, -1, -1):
        g_inner = _block_backward(params.blocks[b], trace.block_caches[b], g_out, grads, f"blocks.{b}.")
        g_out = g_total + g_out + g_inner
    grads["input"] = g_out
    ordered = {name: grads[name] for name in params.tensors()}
    ordered["input"] = grads["input"]
    return ordered


def forward(params: ModelParams, sample: GraphSample, lambda_mode: str = "bound"):
    """Single-graph forward: ``(probabilities (C,), trace)``."""
    lt = scaled_laplacian_from_adjacency(sample.adjacency, lambda_mode)
    probs, trace = forward_batch(params, sample.node_features[None], lt[None])
    return probs[0], trace


# --- block transfer ----------------------------------------------------------------------

def export_blocks(params: ModelParams, path, channel_count: int | None = None) -> Path:
    """Write only the residual-block tensors (not the dense head) to ``path``."""
    if channel_count is None:
        channel_count = params.meta.get("channel_count")
    header = {
        "format": "resgcnn-blocks",
        "format_version": BLOCK_ARCHIVE_VERSION,
        "channel_count": channel_count,
        "source_num_classes": params.num_classes,
        "architecture": params.arch.to_dict(),
        "layer_shapes": [list(s) for s in params.arch.layer_shapes()],
        "epsilon": [layer.norm.epsilon for block in params.blocks for layer in block],
    }
    return archive.write(path, header, params.block_tensors())


def read_block_archive(path) -> tuple[dict, dict[str, np.ndarray]]:
    header, tensors = archive.read(path)
    if header.get("format") != "resgcnn-blocks":
        raise archive.ArchiveError(f"{path} is not a block archive")
    return header, tensors


def import_blocks(source, num_target_classes: int, seed: int = 0,
                  arch: Architecture = DEFAULT_ARCHITECTURE) -> ModelParams:
    """Fresh model whose blocks are copied from ``source`` and flagged frozen.

    ``source`` is an archive path or an already-read ``(header, tensors)``
    pair. The dense layers are newly initialized for the target classes.
    """
    header, tensors = read_block_archive(source) if isinstance(source, (str, Path)) else source
    src_arch = Architecture.from_dict(header["architecture"])
    if src_arch != arch:
        raise ValueError(f"archive architecture {src_arch} does not match {arch}")
    params = build_model(num_target_classes, seed, arch)
    live = params.block_tensors()
    if set(live) != set(tensors):
        raise ValueError("archive tensors do not match the model's block layout")
    for name, arr in live.items():
        src = tensors[name]
        if src.shape != arr.shape:
            raise ValueError(f"{name}: archive shape {src.shape} != expected {arr.shape}")
        arr[...] = src
    eps = header.get("epsilon")
    if eps:
        for layer, e in zip((l for block in params.blocks for l in block), eps):
            layer.norm.epsilon = float(e)
    params.frozen_blocks = True
    params.meta["source_num_classes"] = header.get("source_num_classes")
    params.meta["channel_count"] = header.get("channel_count")
    return params


# --- whole-model archive ------------------------------------------------------------------

def save_model(params: ModelParams, path) -> Path:
    header = {
        "format": "resgcnn-model",
        "format_version": BLOCK_ARCHIVE_VERSION,
        "num_classes": params.num_classes,
        "architecture": params.arch.to_dict(),
        "frozen_blocks": params.frozen_blocks,
        "meta": params.meta,
        "epsilon": [layer.norm.epsilon for block in params.blocks for layer in block],
    }
    return archive.write(path, header, params.tensors())


def load_model(path) -> ModelParams:
    header, tensors = archive.read(path)
    if header.get("format") != "resgcnn-model":
        raise archive.ArchiveError(f"{path} is not a model archive")
    arch = Architecture.from_dict(header["architecture"])
    params = build_model(header["num_classes"], 0, arch)
    for name, arr in params.tensors().items():
        arr[...] = tensors[name]
    for layer, e in zip((l for block in params.blocks for l in block), header["epsilon"]):
        layer.norm.epsilon = float(e)
    params.frozen_blocks = header["frozen_blocks"]
    params.meta = header["meta"]
    return params
