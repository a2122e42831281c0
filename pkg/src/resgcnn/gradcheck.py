"""Central finite-difference checks for the hand-written gradients.

Relative error is ``|a - n| / max(|a|, |n|, floor)``. Elements whose
difference stencil ``x +- h`` crosses a Leaky ReLU kink are not
comparable (the one-sided slopes differ) and are redrawn; callers get
the number of such elements back.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

STEP = 1e-5
TOLERANCE = 1e-4
FLOOR = 1e-8

# central stencils: offsets (in steps) and weights (divide by the step)
_STENCILS = {
    2: ((1, -1), (0.5, -0.5)),
    4: ((2, 1, -1, -2), (-1 / 12, 8 / 12, -8 / 12, 1 / 12)),
}


def relative_error(analytic, numeric, floor: float = FLOOR):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def numeric_gradient(loss: Callable[[], float], arr: np.ndarray, indices, step: float = STEP) -> np.ndarray:
    """d loss / d arr[idx] by central differences, perturbing ``arr`` in place."""
    out = np.empty(len(indices))
    for j, idx in enumerate(indices):
        old = arr[idx]
        arr[idx] = old + step
        plus = loss()
        arr[idx] = old - step
        minus = loss()
        arr[idx] = old
        out[j] = (plus - minus) / (2.0 * step)
    return out


@dataclass
class TensorCheck:
    name: str
    max_error: float
    checked: int
    skipped_kinks: int = 0


@dataclass
class GradCheckReport:
    tensors: list[TensorCheck] = field(default_factory=list)

    @property
    def max_error(self) -> float:
        return max((t.max_error for t in self.tensors), default=0.0)

    @property
    def worst(self) -> TensorCheck | None:
        return max(self.tensors, key=lambda t: t.max_error, default=None)

    def passed(self, tol: float = TOLERANCE) -> bool:
        return self.max_error < tol


def check_gradients(probe: Callable[[], tuple[float, np.ndarray | None]], tensors: dict[str, np.ndarray],
                    grads: dict[str, np.ndarray], rng=None, per_tensor: int | None = None,
                    step: float = STEP, floor: float = FLOOR, order: int = 2) -> GradCheckReport:
    """Compare ``grads`` against central differences of ``probe``.

    ``probe()`` returns ``(loss, kink_signature)``; the signature is any
    array that changes when a non-smooth point is crossed (``None`` if the
    function is smooth). Up to ``per_tensor`` elements are drawn per
    tensor (all of them when ``None``). ``order`` selects the 3-point
    (2) or 5-point (4) central stencil, both with spacing ``step``.
    """
    if order not in _STENCILS:
        raise ValueError("order must be 2 or 4")
    rng = np.random.default_rng(0) if rng is None else rng
    report = GradCheckReport()
    for name, arr in tensors.items():
        perm = rng.permutation(arr.size)
        want = arr.size if per_tensor is None else min(per_tensor, arr.size)
        worst, checked, kinks = 0.0, 0, 0
        for flat in perm:
            if checked >= want:
                break
            idx = np.unravel_index(flat, arr.shape)
            old = arr[idx]
            values, sigs = [], []
            for offset in _STENCILS[order][0]:
                arr[idx] = old + offset * step
                val, sig = probe()
                values.append(val)
                sigs.append(sig)
            arr[idx] = old
            if sigs[0] is not None and not all(np.array_equal(sigs[0], s) for s in sigs[1:]):
                kinks += 1
                continue
            num = float(np.dot(np.asarray(_STENCILS[order][1], dtype=np.asarray(values).dtype), values) / step)
            worst = max(worst, float(relative_error(grads[name][idx], num, floor)))
            checked += 1
        report.tensors.append(TensorCheck(name, worst, checked, kinks))
    return report


def model_instance(seed: int, num_nodes: int | None = None, width: int = 8, num_classes: int | None = None,
                   batch: int = 1):
    """A small random model plus batch for checking the full network.

    Widths stay at ``width`` throughout; GraphNorm parameters and the
    dense layers are randomized so that every gradient is generic.
    Returns ``(params, x, ltilde, labels)``.
    """
    from .graph import scaled_laplacian_from_adjacency
    from .model import Architecture, build_model

    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 6)) if num_nodes is None else num_nodes
    c = int(rng.integers(2, 5)) if num_classes is None else num_classes
    arch = Architecture(width, ((width, 2), (width, 3), (width, 3), (width, 2)), 4, width)
    params = build_model(c, seed, arch)
    for block in params.blocks:
        for layer in block:
            f = layer.norm.alpha.shape[0]
            layer.norm.alpha[...] = rng.uniform(0.5, 1.5, f)
            layer.norm.gamma[...] = rng.uniform(0.5, 1.5, f)
            layer.norm.beta[...] = rng.normal(0.0, 0.1, f)
    params.fc.bias[...] = rng.normal(0.0, 0.1, params.fc.bias.shape)
    params.head.weight[...] = rng.normal(0.0, 0.3 / np.sqrt(arch.fc_width), params.head.weight.shape)
    params.head.bias[...] = rng.normal(0.0, 0.1, params.head.bias.shape)
    x = rng.standard_normal((batch, n, width))
    lts = []
    for _ in range(batch):
        a = (rng.random((n, n)) < 0.5).astype(np.float64)
        a = np.maximum(a, a.T)
        np.fill_diagonal(a, 1.0)
        lts.append(scaled_laplacian_from_adjacency(a))
    labels = rng.integers(0, c, batch)
    return params, x, np.stack(lts), labels


def check_model(params, x, ltilde, labels, rng=None, per_tensor: int | None = 8,
                include_input: bool = True, precision=np.longdouble, order: int = 4,
                grad_hook: Callable[[dict], None] | None = None) -> GradCheckReport:
    """Finite-difference check of the mean cross-entropy of the full network.

    The analytic gradients come from the float64 path. The difference
    quotients are evaluated on a copy cast to ``precision`` (extended
    precision by default) so that rounding in ``f(x+h) - f(x-h)`` stays
    far below the tolerance even for gradients near the ``FLOOR``. The
    5-point stencil is the default because GraphNorm over a handful of
    nodes can have enough curvature for the 3-point truncation error to
    reach the tolerance. ``grad_hook`` may alter the analytic gradients
    in place before the comparison (used to prove the check can fail).
    """
    from .layers import softmax_cross_entropy_backward
    from .model import ForwardTrace, backward, extract_features, forward_batch, head_forward

    probs, trace = forward_batch(params, x, ltilde)
    grads = backward(params, trace, softmax_cross_entropy_backward(probs, labels))
    if grad_hook is not None:
        grad_hook(grads)

    hp = params.astype(precision)
    hx = np.asarray(x).astype(precision)
    hl = np.asarray(ltilde).astype(precision)
    rows = np.arange(len(labels))

    def probe():
        tr = ForwardTrace()
        logits = head_forward(hp, extract_features(hp, hx, hl, tr), tr)
        z = logits - logits.max(axis=-1, keepdims=True)
        log_p = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
        signs = [c[2] > 0 for caches in tr.block_caches for c in caches]
        signs.append(tr.fc_pre > 0)
        return -np.mean(log_p[rows, labels]), np.concatenate([s.ravel() for s in signs])

    tensors = dict(hp.tensors())
    if include_input:
        tensors["input"] = hx
    return check_gradients(probe, tensors, grads, rng, per_tensor, order=order)
