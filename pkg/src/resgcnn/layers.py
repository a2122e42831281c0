"""Differentiable layers with hand-written backward passes.

Each ``*_forward`` returns its output together with a cache tuple; the
matching ``*_backward`` consumes that cache and an upstream gradient and
returns gradients for the input and every parameter. Arrays may carry
any number of leading batch axes; node axes are always ``-2`` and
feature axes ``-1``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import cheb_basis

LEAKY_SLOPE = 0.01
GRAPHNORM_EPS = 1e-5


@dataclass
class ChebConvParams:
    theta: np.ndarray  # (K, F_in, F_out)

    def __post_init__(self):
        if self.theta.ndim != 3 or self.theta.shape[0] < 1:
            raise ValueError(f"theta must be (K, F_in, F_out) with K >= 1, got {self.theta.shape}")

    @property
    def k(self) -> int:
        return self.theta.shape[0]


@dataclass
class GraphNormParams:
    alpha: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray
    epsilon: float = GRAPHNORM_EPS

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")

    @classmethod
    def identity(cls, width: int, epsilon: float = GRAPHNORM_EPS) -> "GraphNormParams":
        return cls(np.ones(width), np.ones(width), np.zeros(width), epsilon)


@dataclass
class DenseParams:
    weight: np.ndarray  # (F_in, F_out)
    bias: np.ndarray  # (F_out,)


def _matmul_features(x, w):
    # one flat GEMM is much faster than a stack of tiny per-graph products
    return (x.reshape(-1, x.shape[-1]) @ w).reshape(x.shape[:-1] + (w.shape[-1],))


# --- Chebyshev graph convolution -------------------------------------------

def chebconv_forward(basis, params: ChebConvParams) -> np.ndarray:
    """``sum_k T_k(L) X @ theta_k`` given the precomputed basis."""
    theta = params.theta
    if len(basis) != theta.shape[0]:
        raise ValueError(f"basis has {len(basis)} terms, theta has K={theta.shape[0]}")
    f_in = basis[0].shape[-1]
    if f_in != theta.shape[1]:
        raise ValueError(f"feature width {f_in} does not match theta {theta.shape}")
    stacked = np.concatenate(basis, axis=-1)
    return _matmul_features(stacked, theta.reshape(-1, theta.shape[2]))


def chebconv_layer_forward(ltilde, x, params: ChebConvParams):
    basis = cheb_basis(ltilde, x, params.k)
    stacked = np.concatenate(basis, axis=-1)
    out = _matmul_features(stacked, params.theta.reshape(-1, params.theta.shape[2]))
    return out, (ltilde, stacked, params)


def chebconv_backward(grad_out, cache, need_input_grad: bool = True):
    """Returns ``(grad_x, grad_theta)``; ``grad_x`` is ``None`` when not needed."""
    ltilde, stacked, params = cache
    theta = params.theta
    k, f_in, f_out = theta.shape
    g2 = grad_out.reshape(-1, f_out)
    grad_theta = (stacked.reshape(-1, k * f_in).T @ g2).reshape(theta.shape)
    if not need_input_grad:
        return None, grad_theta

    g_stacked = _matmul_features(grad_out, theta.reshape(-1, f_out).T)
    g_terms = [g_stacked[..., i * f_in:(i + 1) * f_in].copy() for i in range(k)]
    lt_t = np.swapaxes(ltilde, -1, -2)
    # reverse the recursion T_i = 2 L T_{i-1} - T_{i-2}
    for i in range(k - 1, 1, -1):
        g_terms[i - 1] += 2.0 * (lt_t @ g_terms[i])
        g_terms[i - 2] -= g_terms[i]
    if k > 1:
        g_terms[0] += lt_t @ g_terms[1]
    return g_terms[0], grad_theta


# --- GraphNorm ---------------------------------------------------------------

def graphnorm_forward(x, params: GraphNormParams):
    """Per graph and feature: ``gamma * (x - alpha*mean) / sqrt(var + eps) + beta``.

    Statistics run over the node axis of each graph separately.
    """
    mean = x.mean(axis=-2, keepdims=True)
    shifted = x - params.alpha * mean
    var = np.mean(shifted * shifted, axis=-2, keepdims=True)
    std = np.sqrt(var + params.epsilon)
    xhat = shifted / std
    out = params.gamma * xhat + params.beta
    return out, (mean, shifted, std, xhat, params)


def graphnorm_backward(grad_out, cache):
    """Returns ``(grad_x, grad_alpha, grad_gamma, grad_beta)``."""
    mean, shifted, std, xhat, params = cache
    n = grad_out.shape[-2]
    lead = tuple(range(grad_out.ndim - 1))
    grad_beta = grad_out.sum(axis=lead)
    grad_gamma = (grad_out * xhat).sum(axis=lead)
    g_hat = grad_out * params.gamma
    g_std = -np.sum(g_hat * shifted, axis=-2, keepdims=True) / (std * std)
    g_shift = g_hat / std + g_std * shifted / (std * n)
    g_shift_sum = g_shift.sum(axis=-2, keepdims=True)
    grad_alpha = -(g_shift_sum * mean).sum(axis=lead)
    grad_x = g_shift - params.alpha * g_shift_sum / n
    return grad_x, grad_alpha, grad_gamma, grad_beta


# --- activations, dense, pooling ----------------------------------------------

def leaky_relu(x, slope: float = LEAKY_SLOPE):
    return np.maximum(x, slope * x) if 0.0 <= slope <= 1.0 else np.where(x > 0, x, slope * x)


def leaky_relu_backward(grad_out, x, slope: float = LEAKY_SLOPE):
    # the subgradient at exactly 0 is taken as the slope
    return np.where(x > 0, grad_out, slope * grad_out)


def dense_forward(x, params: DenseParams):
    w = params.weight
    if x.shape[-1] != w.shape[0]:
        raise ValueError(f"input width {x.shape[-1]} does not match weight {w.shape}")
    return _matmul_features(x, w) + params.bias


def dense_backward(grad_out, x, params: DenseParams):
    """Returns ``(grad_x, grad_weight, grad_bias)``."""
    g2 = grad_out.reshape(-1, grad_out.shape[-1])
    x2 = x.reshape(-1, x.shape[-1])
    return _matmul_features(grad_out, params.weight.T), x2.T @ g2, g2.sum(axis=0)


def mean_pool(x):
    return x.mean(axis=-2)


def mean_pool_backward(grad_out, num_nodes: int):
    return np.repeat(grad_out[..., None, :] / num_nodes, num_nodes, axis=-2)


# --- softmax + cross-entropy ----------------------------------------------------

def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy over the leading axis and the probabilities.

    ``logits`` is ``(C,)`` with an integer label or ``(B, C)`` with a
    label vector.
    """
    logits = np.asarray(logits, dtype=np.float64)
    single = logits.ndim == 1
    lg = logits[None, :] if single else logits
    lab = np.atleast_1d(np.asarray(labels))
    c = lg.shape[-1]
    if lab.shape[0] != lg.shape[0]:
        raise ValueError("one label per row of logits is required")
    if np.any(lab < 0) or np.any(lab >= c):
        raise ValueError(f"label out of range for {c} classes")
    z = lg - lg.max(axis=-1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=-1))
    log_p = z - log_norm[:, None]
    probs = np.exp(log_p)
    loss = float(-np.mean(log_p[np.arange(lg.shape[0]), lab]))
    return loss, (probs[0] if single else probs)


def softmax_cross_entropy_backward(probs, labels):
    """Gradient of the mean loss with respect to the logits."""
    single = probs.ndim == 1
    p = probs[None, :] if single else probs
    lab = np.atleast_1d(np.asarray(labels))
    g = p.copy()
    g[np.arange(p.shape[0]), lab] -= 1.0
    g /= p.shape[0]
    return g[0] if single else g
