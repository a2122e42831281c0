import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from resgcnn.graph import (GraphSample, build_adjacency, cheb_basis, correlation_matrix, estimate_lambda_max,
                           laplacian, normalized_laplacian, pearson, scale_laplacian,
                           scaled_laplacian_from_adjacency)
from conftest import random_adjacency


def brute_pearson(x, y):
    n = len(x)
    mx = sum(x) / n
    my = sum(y) / n
    cov = sum((a - mx) * (b - my) for a, b in zip(x, y)) / n
    vx = sum((a - mx) ** 2 for a in x) / n
    vy = sum((b - my) ** 2 for b in y) / n
    return cov / math.sqrt(vx * vy)


class TestPearson:
    def test_self_and_negation(self, rng):
        x = rng.standard_normal(50)
        assert pearson(x, x) == 1.0
        assert pearson(x, -x) == pytest.approx(-1.0, abs=1e-12)

    def test_affine_relation(self):
        assert pearson([1, 2, 3, 4], [2, 4, 6, 8]) == pytest.approx(1.0, abs=1e-12)

    def test_constant_channel(self, rng):
        assert pearson(rng.standard_normal(10), np.full(10, 3.0)) == 0.0
        assert pearson(np.full(10, 3.0), np.full(10, 3.0)) == 1.0
        assert pearson(np.full(10, 3.0), np.full(10, 4.0)) == 0.0

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            pearson([1, 2, 3], [1, 2])
        with pytest.raises(ValueError):
            pearson([1, np.nan], [1, 2])
        with pytest.raises(ValueError):
            pearson([1.0], [2.0])

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, 12, elements=st.floats(-100, 100)),
           arrays(np.float64, 12, elements=st.floats(-100, 100)),
           st.floats(0.1, 10), st.floats(-5, 5))
    def test_symmetric_scale_invariant_sign_flip(self, x, y, a, b):
        r = pearson(x, y)
        assert -1.0 <= r <= 1.0
        assert pearson(y, x) == pytest.approx(r, abs=1e-9)
        if np.std(x) > 1e-3 and np.std(y) > 1e-3 and not np.array_equal(x, y):
            assert pearson(a * x + b, y) == pytest.approx(r, abs=1e-7)
            assert pearson(-x, y) == pytest.approx(-r, abs=1e-9)

    def test_matches_direct_summation(self, rng):
        for _ in range(20):
            x, y = rng.standard_normal((2, 30))
            assert pearson(x, y) == pytest.approx(brute_pearson(list(x), list(y)), abs=1e-12)


class TestAdjacency:
    def test_identical_channels(self, rng):
        x = rng.standard_normal(20)
        np.testing.assert_array_equal(build_adjacency(np.stack([x, x]), 0.2), [[1, 1], [1, 1]])

    def test_negated_channels(self, rng):
        x = rng.standard_normal(20)
        np.testing.assert_array_equal(build_adjacency(np.stack([x, -x]), 0.2), [[1, 0], [0, 1]])
        np.testing.assert_array_equal(build_adjacency(np.stack([x, -x]), 0.2, absolute=True), [[1, 1], [1, 1]])

    def test_matches_brute_force_oracle(self, rng):
        # a 27-channel window with shared latent structure
        latent = rng.standard_normal((3, 128))
        mix = rng.normal(0, 1, (27, 3))
        window = mix @ latent + 0.5 * rng.standard_normal((27, 128))
        window[5] = 2.0  # a dead channel
        a = build_adjacency(window, 0.2)
        for i in range(27):
            for j in range(27):
                xi, xj = list(window[i]), list(window[j])
                if i == j:
                    want = 1.0
                elif np.std(window[i]) == 0 or np.std(window[j]) == 0:
                    want = 0.0
                else:
                    want = float(brute_pearson(xi, xj) >= 0.2)
                assert a[i, j] == want, (i, j)

    def test_vectorized_matches_pairwise(self, rng):
        s = rng.standard_normal((9, 40))
        s[3] = s[1]
        s[4] = 0.0
        rho = correlation_matrix(s)
        for i in range(9):
            for j in range(9):
                assert rho[i, j] == pytest.approx(pearson(s[i], s[j]), abs=1e-12)

    def test_rejects_single_channel(self, rng):
        with pytest.raises(ValueError):
            build_adjacency(rng.standard_normal((1, 10)))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(2, 10), st.integers(2, 40), st.integers(0, 2**32 - 1))
    def test_symmetric_binary_unit_diagonal(self, c, p, seed):
        s = np.random.default_rng(seed).standard_normal((c, p))
        a = build_adjacency(s, 0.2)
        np.testing.assert_array_equal(a, a.T)
        assert set(np.unique(a)) <= {0.0, 1.0}
        np.testing.assert_array_equal(np.diag(a), 1.0)

    def test_graph_sample_validation(self):
        with pytest.raises(ValueError):
            GraphSample(np.zeros((3, 4)), np.eye(2), 0)
        with pytest.raises(ValueError):
            GraphSample(np.full((2, 4), np.nan), np.eye(2), 0)


class TestLaplacian:
    def test_two_node_complete(self):
        np.testing.assert_allclose(normalized_laplacian([[1, 1], [1, 1]]), [[0.5, -0.5], [-0.5, 0.5]])

    def test_identity_gives_zero(self):
        np.testing.assert_array_equal(normalized_laplacian(np.eye(3)), np.zeros((3, 3)))

    def test_combinatorial_annihilates_ones(self, rng):
        a = random_adjacency(rng, 9)
        np.testing.assert_array_equal(laplacian(a) @ np.ones(9), np.zeros(9))

    def test_eigenvalues_in_range(self, rng):
        for _ in range(10):
            a = random_adjacency(rng, 8)
            lap = normalized_laplacian(a)
            d = a.sum(axis=1)
            oracle = np.eye(8) - a / np.sqrt(np.outer(d, d))
            np.testing.assert_allclose(np.linalg.eigvalsh(lap), np.linalg.eigvalsh(oracle), atol=1e-9)
            ev = np.linalg.eigvalsh(lap)
            assert ev.min() > -1e-9 and ev.max() < 2 + 1e-9

    def test_rejects_bad_adjacency(self):
        with pytest.raises(ValueError):
            normalized_laplacian([[1, 1], [0, 1]])
        with pytest.raises(ValueError):
            normalized_laplacian([[0, 0], [0, 1]])


class TestLambdaMax:
    def test_examples(self):
        assert estimate_lambda_max(np.zeros((4, 4))) == 0.0
        assert estimate_lambda_max([[0.5, -0.5], [-0.5, 0.5]]) == pytest.approx(1.0, rel=1e-6)

    @pytest.mark.parametrize("method", ["dense", "power"])
    def test_random_symmetric(self, rng, method):
        for _ in range(5):
            m = rng.standard_normal((10, 10))
            m = m + m.T
            want = np.linalg.eigvalsh(m).max()
            assert estimate_lambda_max(m, method) == pytest.approx(want, rel=1e-6)

    def test_power_iteration_cap(self, rng):
        m = rng.standard_normal((10, 10))
        with pytest.raises(RuntimeError):
            estimate_lambda_max(m + m.T, "power", max_iter=1)


class TestScaledLaplacian:
    def test_zero_gives_minus_identity(self):
        np.testing.assert_array_equal(scale_laplacian(np.zeros((3, 3)), 1.3).matrix, -np.eye(3))

    def test_unit_spectrum(self):
        lt = scale_laplacian(np.array([[0.5, -0.5], [-0.5, 0.5]]), 1.0).matrix
        np.testing.assert_allclose(np.linalg.eigvalsh(lt), [-1, 1], atol=1e-12)

    def test_rejects_nonpositive_lambda(self):
        with pytest.raises(ValueError):
            scale_laplacian(np.eye(2), 0.0)

    def test_exact_mode_spectrum(self, rng):
        for _ in range(20):
            a = random_adjacency(rng, int(rng.integers(2, 12)))
            for mode in ("exact", "bound"):
                lt = scaled_laplacian_from_adjacency(a, mode)
                np.testing.assert_allclose(lt, lt.T, atol=1e-9)
                ev = np.linalg.eigvalsh(lt)
                assert ev.min() >= -1 - 1e-9 and ev.max() <= 1 + 1e-9


class TestChebBasis:
    def test_identity_and_negative_identity(self, rng):
        x = rng.standard_normal((4, 3))
        for got, want in zip(cheb_basis(np.eye(4), x, 3), [x, x, x]):
            np.testing.assert_array_equal(got, want)
        for got, want in zip(cheb_basis(-np.eye(4), x, 3), [x, -x, x]):
            np.testing.assert_array_equal(got, want)

    def test_scalar_closed_form(self):
        for t in np.linspace(-1, 1, 41):
            terms = cheb_basis(np.array([[t]]), np.array([[1.0]]), 9)
            for k, term in enumerate(terms):
                assert term[0, 0] == pytest.approx(math.cos(k * math.acos(t)), abs=1e-10)

    def test_spectral_oracle(self, rng):
        a = random_adjacency(rng, 6)
        lt = scaled_laplacian_from_adjacency(a, "exact")
        lam, u = np.linalg.eigh(lt)
        lam = np.clip(lam, -1, 1)
        x = rng.standard_normal((6, 4))
        for k, term in enumerate(cheb_basis(lt, x, 3)):
            want = u @ np.diag(np.cos(k * np.arccos(lam))) @ u.T @ x
            np.testing.assert_allclose(term, want, atol=1e-8)

    def test_batched_matches_single(self, rng):
        lts = np.stack([scaled_laplacian_from_adjacency(random_adjacency(rng, 5)) for _ in range(3)])
        xs = rng.standard_normal((3, 5, 2))
        batched = cheb_basis(lts, xs, 4)
        for b in range(3):
            for k, term in enumerate(cheb_basis(lts[b], xs[b], 4)):
                np.testing.assert_allclose(batched[k][b], term, atol=1e-14)

    def test_rejects_bad_order(self, rng):
        with pytest.raises(ValueError):
            cheb_basis(np.eye(3), rng.standard_normal((3, 2)), 0)
        with pytest.raises(ValueError):
            cheb_basis(np.eye(3), rng.standard_normal((4, 2)), 2)
