"""Correlation graphs, Laplacians and the Chebyshev basis.

Every function here is a pure function of its arguments. Matrices are
plain ``numpy`` arrays in float64.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

#: upper spectral bound of any normalized Laplacian
LAMBDA_MAX_BOUND = 2.0


@dataclass
class GraphSample:
    """Node features ``(N, F)`` plus a binary adjacency ``(N, N)``."""

    node_features: np.ndarray
    adjacency: np.ndarray
    label: int
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.node_features = np.asarray(self.node_features, dtype=np.float64)
        self.adjacency = np.asarray(self.adjacency, dtype=np.float64)
        n = self.node_features.shape[0]
        if self.node_features.ndim != 2:
            raise ValueError("node_features must be a 2-D (N, F) array")
        if self.adjacency.shape != (n, n):
            raise ValueError(f"adjacency must be ({n}, {n}), got {self.adjacency.shape}")
        if not np.all(np.isfinite(self.node_features)):
            raise ValueError("node_features contain non-finite values")
        if self.label < 0:
            raise ValueError("label must be a non-negative class id")

    @property
    def num_nodes(self) -> int:
        return self.node_features.shape[0]


@dataclass(frozen=True)
class ScaledLaplacian:
    matrix: np.ndarray
    lambda_max: float


def pearson(x, y) -> float:
    """Population Pearson correlation.

    A zero-variance argument correlates to 0 with anything it is not
    elementwise equal to; identical vectors always give 1.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"expected two vectors of equal length, got {x.shape} and {y.shape}")
    if x.size < 2:
        raise ValueError("need at least 2 samples")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("inputs contain non-finite values")
    if np.array_equal(x, y):
        return 1.0
    dx = x - x.mean()
    dy = y - y.mean()
    sx = np.sqrt(np.mean(dx * dx))
    sy = np.sqrt(np.mean(dy * dy))
    if sx == 0.0 or sy == 0.0:
        return 0.0
    rho = np.mean(dx * dy) / (sx * sy)
    return float(np.clip(rho, -1.0, 1.0))


def correlation_matrix(signals) -> np.ndarray:
    """Pairwise :func:`pearson` for the rows of a ``(C, P)`` array, vectorized."""
    s = np.asarray(signals, dtype=np.float64)
    if s.ndim != 2:
        raise ValueError("signals must be (channels, samples)")
    if s.shape[1] < 2:
        raise ValueError("need at least 2 samples per channel")
    if not np.all(np.isfinite(s)):
        raise ValueError("signals contain non-finite values")
    d = s - s.mean(axis=1, keepdims=True)
    sd = np.sqrt(np.mean(d * d, axis=1))
    cov = (d @ d.T) / s.shape[1]
    ok = sd > 0.0
    rho = np.zeros_like(cov)
    denom = np.outer(sd[ok], sd[ok])
    rho[np.ix_(ok, ok)] = cov[np.ix_(ok, ok)] / denom
    np.clip(rho, -1.0, 1.0, out=rho)
    # elementwise-identical channels (including identical constants) are fully correlated
    same = (s[:, None, :] == s[None, :, :]).all(axis=2)
    rho[same] = 1.0
    return rho


def build_adjacency(signals, psi: float = 0.2, absolute: bool = False) -> np.ndarray:
    """Binary adjacency ``A[i, j] = 1`` iff ``rho(i, j) >= psi``.

    ``signals`` is a ``(C, P)`` array or anything with a ``signals``
    attribute (a sensor window). With ``absolute=True`` the threshold is
    applied to ``|rho|`` instead of the signed coefficient.
    """
    s = getattr(signals, "signals", signals)
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] < 2:
        raise ValueError("a window needs at least 2 channels")
    if not -1.0 < psi < 1.0:
        raise ValueError("psi must lie in (-1, 1)")
    rho = correlation_matrix(s)
    if absolute:
        rho = np.abs(rho)
    a = (rho >= psi).astype(np.float64)
    a = np.maximum(a, a.T)
    np.fill_diagonal(a, 1.0)
    return a


def degree_matrix(adjacency) -> np.ndarray:
    a = np.asarray(adjacency, dtype=np.float64)
    return np.diag(a.sum(axis=1))


def laplacian(adjacency) -> np.ndarray:
    """Combinatorial Laplacian ``D - A``."""
    a = np.asarray(adjacency, dtype=np.float64)
    return degree_matrix(a) - a


def normalized_laplacian(adjacency) -> np.ndarray:
    """``I - D^-1/2 A D^-1/2``."""
    a = np.asarray(adjacency, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("adjacency must be square")
    if not np.array_equal(a, a.T):
        raise ValueError("adjacency must be symmetric")
    deg = a.sum(axis=1)
    if np.any(deg <= 0):
        raise ValueError("adjacency has a zero-degree row")
    inv_sqrt = 1.0 / np.sqrt(deg)
    lap = -(inv_sqrt[:, None] * a * inv_sqrt[None, :])
    lap[np.diag_indices_from(lap)] += 1.0
    return lap


def estimate_lambda_max(lap, method: str = "auto", tol: float = 1e-12, max_iter: int = 10_000) -> float:
    """Largest eigenvalue of a symmetric matrix.

    ``method`` is ``"dense"``, ``"power"`` or ``"auto"`` (dense for
    ``N <= 64``). Power iteration runs on ``L + cI`` with ``c`` the
    Gershgorin radius so the shifted matrix is positive semidefinite.
    """
    m = np.asarray(lap, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("matrix must be square")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix contains non-finite values")
    if not np.allclose(m, m.T, atol=1e-9, rtol=0.0):
        raise ValueError("matrix must be symmetric")
    n = m.shape[0]
    if method == "auto":
        method = "dense" if n <= 64 else "power"
    if method == "dense":
        return float(np.linalg.eigvalsh(m)[-1])
    if method != "power":
        raise ValueError(f"unknown method {method!r}")

    shift = float(np.max(np.sum(np.abs(m), axis=1)))
    if shift == 0.0:
        return 0.0
    shifted = m + shift * np.eye(n)
    v = np.random.default_rng(0).standard_normal(n)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(max_iter):
        w = shifted @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return -shift
        v = w / norm
        new = float(v @ shifted @ v)
        if abs(new - est) <= tol * max(abs(new), 1.0):
            return new - shift
        est = new
    raise RuntimeError(f"power iteration did not converge in {max_iter} iterations")


def scale_laplacian(lap, lambda_max: float = LAMBDA_MAX_BOUND) -> ScaledLaplacian:
    """Map the spectrum ``[0, lambda_max]`` onto ``[-1, 1]``: ``2L/lambda_max - I``."""
    if not lambda_max > 0:
        raise ValueError("lambda_max must be positive")
    m = np.asarray(lap, dtype=np.float64)
    out = (2.0 / lambda_max) * m
    out[np.diag_indices_from(out)] -= 1.0
    return ScaledLaplacian(matrix=out, lambda_max=float(lambda_max))


def scaled_laplacian_from_adjacency(adjacency, lambda_mode: str = "bound") -> np.ndarray:
    """Convenience: adjacency -> scaled normalized Laplacian matrix.

    ``lambda_mode="bound"`` uses 2.0, ``"exact"`` estimates it per graph.
    """
    lap = normalized_laplacian(adjacency)
    if lambda_mode == "bound":
        lmax = LAMBDA_MAX_BOUND
    elif lambda_mode == "exact":
        lmax = estimate_lambda_max(lap)
        if lmax <= 0.0:
            # edgeless graph: L = 0, any positive scale yields -I
            lmax = LAMBDA_MAX_BOUND
    else:
        raise ValueError(f"unknown lambda_mode {lambda_mode!r}")
    return scale_laplacian(lap, lmax).matrix


def cheb_basis(ltilde, x, k: int) -> list[np.ndarray]:
    """``[T_0(L)X, ..., T_{k-1}(L)X]`` by the three-term recursion.

    Works on a single graph (``L: (N, N)``, ``X: (N, F)``) or a batch
    (``(B, N, N)`` and ``(B, N, F)``). Only matrix-matrix products
    against ``X`` are formed.
    """
    lt = ltilde.matrix if isinstance(ltilde, ScaledLaplacian) else np.asarray(ltilde)
    x = np.asarray(x)
    if k < 1:
        raise ValueError("K must be >= 1")
    if lt.shape[-1] != lt.shape[-2] or lt.shape[-1] != x.shape[-2]:
        raise ValueError(f"dimension mismatch: L {lt.shape} vs X {x.shape}")
    terms = [x]
    if k > 1:
        terms.append(lt @ x)
    for _ in range(2, k):
        terms.append(2.0 * (lt @ terms[-1]) - terms[-2])
    return terms
