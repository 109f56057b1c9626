"""Backend parity and correctness of the two compiled kernels against
independent oracles (scipy linprog; exhaustive vertex enumeration)."""

import itertools

import numpy as np
import pytest
from scipy.optimize import linprog

import dpgraphon.kernels as kernels
import dpgraphon.kernels._fallback as fallback

HAVE_CYTHON = kernels.BACKEND == "cython"


def linprog_oracle(U, W, caps):
    n = U.shape[0]
    idx = [(i, j) for i in range(n) for j in range(i + 1, n) if U[i, j] > 0]
    if not idx:
        return 0.0
    c = np.array([-2.0 * W[i, j] for (i, j) in idx])
    A_ub = np.array([[1.0 if v in (i, j) else 0.0 for (i, j) in idx] for v in range(n)])
    res = linprog(
        c,
        A_ub=A_ub,
        b_ub=caps,
        bounds=[(0, U[i, j]) for (i, j) in idx],
        method="highs",
    )
    return -res.fun


def random_instance(seed, n=None):
    gen = np.random.default_rng(seed)
    n = n or int(gen.integers(3, 9))
    U = np.triu(gen.random((n, n)) * (gen.random((n, n)) < 0.6), 1)
    U = U + U.T
    W = np.triu(gen.random((n, n)), 1)
    W = W + W.T
    caps = gen.random(n) * 1.5
    return U, W, caps


class TestTransport:
    @pytest.mark.parametrize("seed", range(30))
    def test_matches_linprog(self, seed):
        U, W, caps = random_instance(seed)
        oracle = linprog_oracle(U, W, caps)
        got = kernels.transport_value(U, W, caps)
        assert got == pytest.approx(oracle, abs=1e-7, rel=1e-7)

    @pytest.mark.parametrize("seed", range(10))
    def test_backend_parity(self, seed):
        U, W, caps = random_instance(seed)
        a = kernels.transport_value(U, W, caps)
        b = fallback.transport_value(U, W, caps)
        assert a == pytest.approx(b, abs=1e-9)

    def test_solution_feasible_and_consistent(self):
        for seed in range(10):
            U, W, caps = random_instance(seed)
            val, Y = kernels.transport_value(U, W, caps, return_solution=True)
            assert np.allclose(Y, Y.T)
            assert Y.min() >= -1e-9
            assert np.all(Y <= U + 1e-9)
            assert np.all(Y.sum(axis=1) <= caps + 1e-8)
            assert (W * Y).sum() == pytest.approx(val, abs=1e-8)

    def test_shortcut_exact_when_caps_slack(self):
        U, W, _ = random_instance(3, n=6)
        caps = np.full(6, U.sum())
        assert kernels.transport_value(U, W, caps) == pytest.approx((W * U).sum(), abs=1e-13)

    def test_batch_matches_single(self):
        gen = np.random.default_rng(4)
        n, k = 7, 2
        U, _, caps = random_instance(5, n=n)
        caps = caps * 0.7
        labels = gen.integers(0, k, size=(4, n)).astype(np.int8)
        B = gen.random((3, k, k))
        B = 0.5 * (B + B.transpose(0, 2, 1))
        out = kernels.transport_batch(U, caps, labels, B)
        for p in range(4):
            for c in range(3):
                W = B[c][np.ix_(labels[p], labels[p])].astype(float)
                np.fill_diagonal(W, 0.0)
                assert out[p, c] == pytest.approx(
                    kernels.transport_value(U, W, caps), abs=1e-9
                )


def quad_from_pair(B, B0):
    k = B.shape[0]
    D = (B[:, :, None, None] - B0[None, None, :, :]) ** 2
    Q = D.transpose(0, 2, 1, 3).reshape(k * k, k * k) / k**2
    return 0.5 * (Q + Q.T)


def permutation_starts(k):
    eye = np.eye(k)
    return np.array([eye[list(p)] for p in itertools.permutations(range(k))])


class TestFrankWolfe:
    def test_linear_objective_lands_on_assignment_vertex(self):
        # vec(S)^T Q vec(S) = k * <c, S> when Q = (c 1^T + 1 c^T)/2
        gen = np.random.default_rng(0)
        k = 3
        c = gen.uniform(size=k * k)
        one = np.ones(k * k)
        Q = 0.5 * (np.outer(c, one) + np.outer(one, c))
        starts = np.concatenate(
            [permutation_starts(k), [np.full((k, k), 1.0 / k)]]
        )
        val, S, conv = kernels.fw_birkhoff(Q, starts)
        from scipy.optimize import linear_sum_assignment

        rows, cols = linear_sum_assignment(c.reshape(k, k))
        best = c.reshape(k, k)[rows, cols].sum() * k
        assert conv
        assert val == pytest.approx(best, abs=1e-6)

    def test_convex_interior_minimum(self):
        # f(S) = ||S||_F^2 differs from ||S - J/k||_F^2 by a constant on the
        # polytope (the linear term is constant there); the minimizer is the
        # uniform matrix J/k with ||J/k||_F^2 = 1
        k = 3
        J = np.full((k, k), 1.0 / k)
        Q = np.eye(k * k)
        starts = permutation_starts(k)
        val, S, conv = kernels.fw_birkhoff(Q, starts)
        assert val == pytest.approx(1.0, abs=1e-6)
        assert np.allclose(S, J, atol=1e-3)

    @pytest.mark.parametrize("seed", range(15))
    def test_matches_analytic_k2(self, seed):
        gen = np.random.default_rng(seed)
        B = gen.uniform(0, 4, size=(2, 2))
        B = 0.5 * (B + B.T)
        B0 = gen.uniform(0, 4, size=(2, 2))
        B0 = 0.5 * (B0 + B0.T)
        Q = quad_from_pair(B, B0)
        ss = np.linspace(0, 1, 100001)
        X = np.stack([ss, 1 - ss, 1 - ss, ss], axis=1)
        exact = np.einsum("mi,ij,mj->m", X, Q, X).min()
        starts = permutation_starts(2)
        val, _, _ = kernels.fw_birkhoff(Q, starts)
        assert val <= exact + 1e-8
        assert val >= exact - 1e-6

    def test_backend_parity_values(self):
        gen = np.random.default_rng(9)
        for _ in range(5):
            B = gen.uniform(0, 3, size=(3, 3))
            B = 0.5 * (B + B.T)
            B0 = gen.uniform(0, 3, size=(3, 3))
            B0 = 0.5 * (B0 + B0.T)
            Q = quad_from_pair(B, B0)
            starts = permutation_starts(3)
            v1, _, _ = kernels.fw_birkhoff(Q, starts)
            v2, _, _ = fallback.fw_birkhoff(Q, starts)
            assert v1 == pytest.approx(v2, abs=1e-7)


@pytest.mark.skipif(not HAVE_CYTHON, reason="compiled backend not built")
def test_compiled_backend_is_active():
    import dpgraphon.kernels._core as core

    assert kernels.transport_value is core.transport_value
