"""Numerical self-checks run by ``resgcnn selfcheck`` and the test suite."""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .evaluation import report_from_confusion
from .gradcheck import TOLERANCE, check_model, model_instance
from .graph import cheb_basis, normalized_laplacian, scale_laplacian
from .layers import ChebConvParams, GraphNormParams, chebconv_forward, graphnorm_forward


@dataclass
class CheckResult:
    name: str
    passed: bool
    max_error: float
    tolerance: float
    seconds: float
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status}  {self.name:<22} max error {self.max_error:.3e} (tol {self.tolerance:.0e}) "
                f"{self.seconds:6.2f}s {self.detail}").rstrip()


def random_graph(rng, n: int, p: float = 0.5) -> np.ndarray:
    """Symmetric 0/1 adjacency with self-loops."""
    a = (rng.random((n, n)) < p).astype(np.float64)
    a = np.triu(a, 1)
    a = a + a.T
    np.fill_diagonal(a, 1.0)
    return a


def spectral_filter(ltilde, x, theta) -> np.ndarray:
    """``sum_k U T_k(Lambda) U^T X theta_k`` with ``T_k(l) = cos(k arccos l)``.

    Works in the graph Fourier basis and evaluates the polynomials in
    closed form, so it shares nothing with the recursion it checks.
    """
    lam, u = np.linalg.eigh(ltilde)
    lam = np.clip(lam, -1.0, 1.0)
    x_hat = u.T @ x
    out = np.zeros((x.shape[0], theta.shape[2]))
    for k in range(theta.shape[0]):
        response = np.cos(k * np.arccos(lam))
        out += u @ (response[:, None] * x_hat) @ theta[k]
    return out


def spectral_equivalence(instances: int = 50, seed: int = 0, max_nodes: int = 12, max_width: int = 8,
                         max_order: int = 4) -> float:
    """Largest absolute gap between Chebyshev and eigendecomposition filtering."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        n = int(rng.integers(2, max_nodes + 1))
        f_in = int(rng.integers(1, max_width + 1))
        f_out = int(rng.integers(1, max_width + 1))
        k = int(rng.integers(1, max_order + 1))
        lt = scale_laplacian(normalized_laplacian(random_graph(rng, n))).matrix
        x = rng.standard_normal((n, f_in))
        theta = rng.standard_normal((k, f_in, f_out))
        cheb = chebconv_forward(cheb_basis(lt, x, k), ChebConvParams(theta))
        worst = max(worst, float(np.max(np.abs(cheb - spectral_filter(lt, x, theta)))))
    return worst


def graphnorm_standardization(instances: int = 50, seed: int = 0) -> float:
    """Deviation of column means from 0 and variances from 1 at initialization."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        n, f = int(rng.integers(2, 13)), int(rng.integers(1, 9))
        x = rng.normal(rng.normal(0, 5), rng.uniform(0.5, 5), (n, f))
        out, _ = graphnorm_forward(x, GraphNormParams.identity(f))
        var = x.var(axis=0)
        expected_var = var / (var + 1e-5)
        worst = max(worst, float(np.max(np.abs(out.mean(axis=0)))),
                    float(np.max(np.abs(out.var(axis=0) - expected_var))))
    return worst


def metric_identities(instances: int = 1000, seed: int = 0) -> float:
    """Largest violation of the report invariants over random confusion matrices.

    Structural identities must hold exactly; the harmonic-mean bounds are
    allowed rounding of a few ulps.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        c = int(rng.integers(2, 8))
        cm = rng.integers(0, 20, (c, c))
        if cm.sum() == 0:
            cm[0, 0] = 1
        r = report_from_confusion(cm)
        t = report_from_confusion(cm.T)
        violations = [
            abs(r.overall_accuracy - 100.0 * np.trace(cm) / cm.sum()),
            float(r.sample_count != cm.sum()),
            float(np.max(np.abs(t.precision - r.recall))),
            float(np.max(np.abs(t.recall - r.precision))),
        ]
        for arr in (r.precision, r.recall, r.f1):
            violations.append(float(np.any((arr < 0) | (arr > 100))))
        lo = np.minimum(r.precision, r.recall)
        hi = (r.precision + r.recall) / 2
        both = (r.precision > 0) & (r.recall > 0)
        bound = np.where(both, np.maximum(lo - r.f1, r.f1 - hi), np.abs(r.f1))
        violations.append(max(0.0, float(np.max(bound)) - 1e-12))
        worst = max(worst, max(violations))
    r = report_from_confusion([[8, 2], [3, 7]])
    hand = [100 * 8 / 11, 100 * 8 / 10, 100 * 16 / 21, 100 * 7 / 9, 100 * 7 / 10, 100 * 14 / 19]
    got = [r.precision[0], r.recall[0], r.f1[0], r.precision[1], r.recall[1], r.f1[1]]
    worst = max(worst, float(np.max(np.abs(np.subtract(got, hand)))) - 1e-12)
    return max(worst, 0.0)


def gradient_check(instances: int = 20, seed: int = 0, per_tensor: int = 8,
                   perturb: float = 0.0) -> tuple[float, int]:
    """Worst relative error over random model instances and the failure count.

    ``perturb`` scales every analytic gradient by ``1 + perturb`` before
    the comparison; a nonzero value must make the check fail.
    """
    def hook(grads):
        for g in grads.values():
            g.flat[:] *= 1.0 + perturb

    worst, failures = 0.0, 0
    for i in range(instances):
        params, x, lt, y = model_instance(seed + i)
        rep = check_model(params, x, lt, y, np.random.default_rng(seed + i), per_tensor,
                          grad_hook=hook if perturb else None)
        worst = max(worst, rep.max_error)
        failures += not rep.passed()
    return worst, failures


def run_all(grad_instances: int = 20, perturb: float = 0.0, seed: int = 0,
            log: Callable[[str], None] | None = None) -> list[CheckResult]:
    results = []

    def timed(name, tol, fn, detail=lambda v: ""):
        t = time.perf_counter()
        value = fn()
        err = value[0] if isinstance(value, tuple) else value
        res = CheckResult(name, err < tol, err, tol, time.perf_counter() - t, detail(value))
        results.append(res)
        if log is not None:
            log(res.line())

    timed("gradients", TOLERANCE, lambda: gradient_check(grad_instances, seed, perturb=perturb),
          lambda v: f"({grad_instances} instances, {v[1]} failing)")
    timed("spectral-equivalence", 1e-8, lambda: spectral_equivalence(seed=seed))
    timed("graphnorm", 1e-6, lambda: graphnorm_standardization(seed=seed))
    timed("metric-identities", 1e-12, lambda: metric_identities(seed=seed))
    return results
