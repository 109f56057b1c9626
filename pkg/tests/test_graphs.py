import numpy as np
import pytest

from dpgraphon.graphs import (
    BlockGraphon,
    BlockMatrix,
    CommunityMembership,
    LabeledGraph,
    empirical_density,
    prune_high_degree,
    read_edge_list,
    read_packed,
    sample_equipartition,
    sample_graphon_graph,
    sample_sbm,
    scale_adjacency,
    write_edge_list,
    write_packed,
)


def uniform_block(k, val=1.0, R=4.0, normalized=False):
    return BlockMatrix(np.full((k, k), val), R=R, normalized=normalized)


def assert_valid_adjacency(G):
    A = G.adjacency
    assert np.array_equal(A, A.T)
    assert np.all(np.diag(A) == 0)
    assert set(np.unique(A)) <= {0, 1}


class TestTypes:
    def test_block_matrix_validation(self):
        with pytest.raises(ValueError):
            BlockMatrix(np.array([[1.0, 2.0], [0.0, 1.0]]), R=4.0)
        with pytest.raises(ValueError):
            BlockMatrix(np.array([[5.0, 1.0], [1.0, 1.0]]), R=4.0)
        with pytest.raises(ValueError):
            BlockMatrix(np.array([[2.0, 1.0], [1.0, 1.0]]), R=4.0, normalized=True)
        B = BlockMatrix(np.array([[1.5, 0.5], [0.5, 1.5]]), R=4.0, normalized=True)
        assert B.k == 2

    def test_membership_validation(self):
        with pytest.raises(ValueError):
            CommunityMembership(np.array([0, 0, 0, 1]), 2)
        z = CommunityMembership(np.array([0, 1, 0, 1]), 2)
        Z = z.matrix()
        assert np.all(Z.sum(axis=1) == 1)
        assert np.all(Z.sum(axis=0) == 2)

    def test_labeled_graph_validation(self):
        with pytest.raises(ValueError):
            LabeledGraph(np.array([[0, 1], [0, 0]]))
        with pytest.raises(ValueError):
            LabeledGraph(np.array([[1, 1], [1, 1]]))


class TestSampleSBM:
    def test_uniform_matrix_is_erdos_renyi(self):
        # B0 = all-ones, d=2, n=4: every off-diagonal pair has prob 0.5
        G = sample_sbm(uniform_block(2, 1.0, normalized=True), d=2.0, n=4, seed=0)
        Q = G.edge_probs
        off = ~np.eye(4, dtype=bool)
        assert np.allclose(Q[off], 0.5)

    def test_disjoint_blocks_have_no_cross_edges(self):
        B0 = BlockMatrix(np.array([[2.0, 0.0], [0.0, 2.0]]), R=4.0, normalized=True)
        for seed in range(10):
            G = sample_sbm(B0, d=2.0, n=4, seed=seed)
            z = G.latent.assignment
            cross = z[:, None] != z[None, :]
            assert G.adjacency[cross].sum() == 0

    def test_probability_overflow_rejected(self):
        B0 = BlockMatrix(np.array([[2.0, 0.0], [0.0, 2.0]]), R=4.0, normalized=True)
        with pytest.raises(ValueError):
            sample_sbm(B0, d=3.0, n=4, seed=0)
        with pytest.raises(ValueError):
            sample_sbm(uniform_block(2, 1.0, normalized=True), d=2.0, n=5, seed=0)

    def test_edge_probs_match_planted_labels(self):
        B0 = BlockMatrix(np.array([[1.5, 0.5], [0.5, 1.5]]), R=4.0, normalized=True)
        G = sample_sbm(B0, d=4.0, n=8, seed=3)
        z = G.latent.assignment
        expected = (4.0 / 8) * B0.entries[np.ix_(z, z)]
        np.fill_diagonal(expected, 0.0)
        assert np.allclose(G.edge_probs, expected)

    def test_adjacency_always_valid(self):
        B0 = BlockMatrix(np.array([[1.5, 0.5], [0.5, 1.5]]), R=4.0, normalized=True)
        for seed in range(5):
            assert_valid_adjacency(sample_sbm(B0, d=5.0, n=20, seed=seed))

    def test_determinism(self):
        B0 = uniform_block(2, 1.0, normalized=True)
        G1 = sample_sbm(B0, d=3.0, n=12, seed=42)
        G2 = sample_sbm(B0, d=3.0, n=12, seed=42)
        assert np.array_equal(G1.adjacency, G2.adjacency)
        assert np.array_equal(G1.latent.assignment, G2.latent.assignment)
        G3 = sample_sbm(B0, d=3.0, n=12, seed=43)
        assert not np.array_equal(G1.adjacency, G3.adjacency)

    @pytest.mark.slow
    def test_mean_degree_monte_carlo(self):
        # Monte-Carlo mean-degree oracle: expected degree d within 3 sigma
        B0 = BlockMatrix(np.array([[1.5, 0.5], [0.5, 1.5]]), R=4.0, normalized=True)
        d, n, trials = 10.0, 1000, 200
        degs = []
        for seed in range(trials):
            G = sample_sbm(B0, d, n, seed=seed)
            degs.append(G.degrees().mean())
        degs = np.array(degs)
        se = degs.std(ddof=1) / np.sqrt(trials)
        assert abs(degs.mean() - d * (1 - 1 / n)) <= 3 * se + 0.05

    @pytest.mark.slow
    def test_conditional_edge_frequency(self):
        # fixed membership and pair: empirical frequency within 4 standard errors
        B0 = BlockMatrix(np.array([[1.5, 0.5], [0.5, 1.5]]), R=4.0, normalized=True)
        n, d, trials = 8, 4.0, 10_000
        z = sample_equipartition(n, 2, seed=1)
        p = (d / n) * B0.entries[z.assignment[0], z.assignment[1]]
        hits = sum(
            sample_sbm(B0, d, n, seed=s, membership=z).adjacency[0, 1] for s in range(trials)
        )
        freq = hits / trials
        se = np.sqrt(p * (1 - p) / trials)
        assert abs(freq - p) <= 4 * se


class TestSampleGraphon:
    def test_constant_graphon_is_erdos_renyi(self):
        W = BlockGraphon(uniform_block(1, 1.0))
        G = sample_graphon_graph(W, rho=0.3, n=50, seed=0)
        assert np.allclose(G.edge_probs[~np.eye(50, dtype=bool)], 0.3)
        assert_valid_adjacency(G)

    def test_two_block_cross_probability_zero(self):
        W = BlockGraphon(BlockMatrix(np.array([[2.0, 0.0], [0.0, 2.0]]), R=4.0))
        G = sample_graphon_graph(W, rho=0.5, n=40, seed=1)
        x = np.asarray(G.latent)
        blocks = (x >= 0.5).astype(int)
        cross = blocks[:, None] != blocks[None, :]
        assert G.edge_probs[cross].sum() == 0

    def test_overflow_rejected(self):
        W = BlockGraphon(BlockMatrix(np.array([[2.0, 0.0], [0.0, 2.0]]), R=4.0))
        with pytest.raises(ValueError):
            sample_graphon_graph(W, rho=0.6, n=10, seed=0)

    @pytest.mark.slow
    def test_density_concentration(self):
        # |rho(Q0) - rho| <= rho/10 with frequency >= 1 - O(Lambda/n)
        B = BlockMatrix(np.array([[1.5, 0.5], [0.5, 1.5]]), R=4.0)
        W = BlockGraphon(B)
        rho, n, trials = 0.1, 500, 1000
        bad = 0
        for seed in range(trials):
            G = sample_graphon_graph(W, rho, n, seed=seed)
            rho_q = G.edge_probs.sum() / n**2
            if abs(rho_q - rho) > rho / 10:
                bad += 1
        # Lambda/n = 1.5/500; allow a conservative constant
        assert bad / trials <= 30 * W.lam / n


class TestPruning:
    def test_star_pruned(self):
        A = np.zeros((10, 10), dtype=np.uint8)
        A[0, 1:] = 1
        A[1:, 0] = 1
        G = LabeledGraph(A)
        pruned, removed = prune_high_degree(G, threshold=5)
        assert removed == frozenset({0})
        assert pruned.num_edges() == 0

    def test_no_change_below_threshold(self):
        G = sample_sbm(uniform_block(2, 1.0, normalized=True), d=3.0, n=12, seed=0)
        pruned, removed = prune_high_degree(G, threshold=12)
        assert removed == frozenset()
        assert np.array_equal(pruned.adjacency, G.adjacency)

    def test_degrees_only_shrink_and_removed_exceeded(self):
        G = sample_sbm(uniform_block(2, 1.0, normalized=True), d=6.0, n=30, seed=5)
        thr = 6
        pruned, removed = prune_high_degree(G, threshold=thr)
        deg0 = G.degrees()
        deg1 = pruned.degrees()
        assert np.all(deg1 <= deg0)
        for v in removed:
            assert deg0[v] > thr
        for v in set(range(30)) - removed:
            assert True  # retained

    def test_l1_distance_counts_removed_edges(self):
        G = sample_sbm(uniform_block(2, 1.0, normalized=True), d=6.0, n=30, seed=7)
        pruned, _ = prune_high_degree(G, threshold=6)
        l1 = np.abs(pruned.adjacency.astype(int) - G.adjacency.astype(int)).sum()
        assert l1 == 2 * (G.num_edges() - pruned.num_edges())


class TestDensityAndScaling:
    def test_complete_graph(self):
        n = 6
        A = np.ones((n, n), dtype=np.uint8) - np.eye(n, dtype=np.uint8)
        assert empirical_density(LabeledGraph(A)) == 1.0

    def test_empty_graph(self):
        assert empirical_density(LabeledGraph(np.zeros((5, 5)))) == 0.0

    def test_single_edge_on_three(self):
        A = np.zeros((3, 3), dtype=np.uint8)
        A[0, 1] = A[1, 0] = 1
        assert empirical_density(LabeledGraph(A)) == pytest.approx(1 / 3)

    def test_scale_adjacency(self):
        A = np.zeros((3, 3), dtype=np.uint8)
        A[0, 1] = A[1, 0] = 1
        G = LabeledGraph(A)
        Y = scale_adjacency(G, 0.5)
        assert set(np.unique(Y.entries)) == {0.0, 2.0}
        assert Y.scale == 0.5
        assert np.array_equal(scale_adjacency(G, 1.0).entries, A.astype(float))
        with pytest.raises(ValueError):
            scale_adjacency(G, 0.0)


class TestFileFormats:
    def test_edge_list_roundtrip(self, tmp_path):
        B0 = BlockMatrix(np.array([[1.5, 0.5], [0.5, 1.5]]), R=4.0, normalized=True)
        G = sample_sbm(B0, d=4.0, n=12, seed=9)
        path = tmp_path / "graph.txt"
        write_edge_list(G, path)
        G2 = read_edge_list(path)
        assert np.array_equal(G.adjacency, G2.adjacency)
        assert np.array_equal(G.latent.assignment, G2.latent.assignment)
        assert np.allclose(G.edge_probs, G2.edge_probs)

    def test_packed_roundtrip(self, tmp_path):
        G = sample_sbm(uniform_block(2, 1.0, normalized=True), d=3.0, n=17 * 2, seed=2)
        path = tmp_path / "graph.bin"
        write_packed(G, path)
        G2 = read_packed(path)
        assert np.array_equal(G.adjacency, G2.adjacency)
