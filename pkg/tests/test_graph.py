import numpy as np
import pytest

from graphdiag import graph as gr


def random_graph(rng, n, p=0.4):
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < p]
    return gr.from_edge_list(pairs, n)


class TestFromEdgeList:
    def test_orientation_collapse(self):
        g = gr.from_edge_list([(0, 1), (1, 0)], 2)
        assert g.n_edges == 1
        assert g.edges.tolist() == [[0, 1]]

    def test_empty(self):
        g = gr.from_edge_list([], 3)
        assert g.n_edges == 0
        assert g.n == 3

    def test_path_degrees(self):
        g = gr.from_edge_list([(0, 1), (1, 2)], 3)
        assert g.degrees().tolist() == [1, 2, 1]

    def test_out_of_range_rejected(self):
        with pytest.raises(gr.GraphError):
            gr.from_edge_list([(0, 3)], 3)

    def test_self_loop_rejected(self):
        with pytest.raises(gr.GraphError):
            gr.from_edge_list([(1, 1)], 3)

    def test_adjacency_symmetric_zero_diagonal(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            g = random_graph(rng, int(rng.integers(2, 15)))
            a = g.adjacency()
            assert np.array_equal(a, a.T)
            assert np.all(np.diag(a) == 0)

    def test_overlapping_masks_rejected(self):
        m = {"train": [True, False], "val": [True, False]}
        with pytest.raises(gr.GraphError):
            gr.Graph(2, [(0, 1)], masks=m)

    def test_dense_cap(self):
        g = gr.from_edge_list([(0, 1)], 2)
        with pytest.raises(gr.GraphError):
            g.adjacency(cap=1)


class TestLaplacian:
    def test_empty_graph_zero(self):
        g = gr.from_edge_list([], 2)
        assert np.array_equal(gr.laplacian(g), np.zeros((2, 2)))

    def test_path(self):
        g = gr.from_edge_list([(0, 1), (1, 2)], 3)
        expected = np.array([[1, -1, 0], [-1, 2, -1], [0, -1, 1]], dtype=float)
        assert np.array_equal(gr.laplacian(g), expected)

    def test_single_edge(self):
        g = gr.from_edge_list([(0, 1)], 2)
        assert np.array_equal(gr.laplacian(g), np.array([[1., -1.], [-1., 1.]]))

    def test_row_sums_and_psd(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            g = random_graph(rng, int(rng.integers(2, 21)))
            lap = gr.laplacian(g)
            assert np.abs(lap.sum(axis=1)).max() < 1e-12
            for _ in range(5):
                x = rng.normal(size=g.n)
                assert x @ lap @ x >= -1e-10


class TestNormalizedAdjacency:
    def test_isolated_node(self):
        g = gr.from_edge_list([], 1)
        assert np.array_equal(gr.normalized_adjacency(g), [[1.0]])

    def test_single_edge(self):
        g = gr.from_edge_list([(0, 1)], 2)
        assert np.allclose(gr.normalized_adjacency(g), 0.5)

    def test_path_entry(self):
        g = gr.from_edge_list([(0, 1), (1, 2)], 3)
        s = gr.normalized_adjacency(g)
        assert s[0, 1] == pytest.approx(1 / np.sqrt(2 * 3))

    def test_isolated_row_is_unit_self_entry(self):
        g = gr.from_edge_list([(0, 1)], 3)
        s = gr.normalized_adjacency(g)
        assert np.array_equal(s[2], [0, 0, 1.0])

    def test_spectrum_in_unit_interval(self):
        # independent dense eigensolver on random graphs
        rng = np.random.default_rng(2)
        for _ in range(30):
            g = random_graph(rng, int(rng.integers(1, 21)))
            eig = np.linalg.eigvalsh(gr.normalized_adjacency(g))
            assert eig.min() >= -1 - 1e-9
            assert eig.max() <= 1 + 1e-9


class TestNeighbors:
    def test_path_middle(self):
        g = gr.from_edge_list([(0, 1), (1, 2)], 3)
        assert set(g.neighbors(1)) == {0, 2}

    def test_isolated(self):
        g = gr.from_edge_list([], 2)
        assert len(g.neighbors(0)) == 0

    def test_k3(self):
        g = gr.from_edge_list([(0, 1), (0, 2), (1, 2)], 3)
        assert set(g.neighbors(0)) == {1, 2}

    def test_out_of_range(self):
        g = gr.from_edge_list([], 2)
        with pytest.raises(gr.GraphError):
            g.neighbors(5)


class TestPermute:
    def test_identity(self):
        g = gr.from_edge_list([(0, 2), (1, 2)], 3)
        assert gr.permute(g, [0, 1, 2]) == g

    def test_swap(self):
        g = gr.from_edge_list([(0, 2)], 3)
        assert gr.permute(g, [1, 0, 2]).edges.tolist() == [[1, 2]]

    def test_degree_multiset_preserved(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            g = random_graph(rng, 8)
            perm = rng.permutation(8)
            assert sorted(gr.permute(g, perm).degrees()) == sorted(g.degrees())

    def test_round_trip(self):
        rng = np.random.default_rng(4)
        feats = rng.normal(size=(6, 3))
        g = gr.Graph(6, [(0, 1), (2, 5), (3, 4)], features=feats,
                     labels=[0, 1, 0, 1, 0, 1])
        perm = rng.permutation(6)
        inv = np.argsort(perm)
        back = gr.permute(gr.permute(g, perm), inv)
        assert back == g
        assert np.allclose(back.features, feats)

    def test_not_bijection(self):
        g = gr.from_edge_list([(0, 1)], 3)
        with pytest.raises(gr.GraphError):
            gr.permute(g, [0, 0, 1])


class TestEdgeListFile:
    def test_round_trip(self, tmp_path):
        g = gr.from_edge_list([(0, 1), (2, 3), (1, 3)], 5)
        path = tmp_path / "g.edges"
        gr.write_edge_list(path, g)
        back = gr.read_edge_list(path, n=5)
        assert back == g

    def test_comments_and_duplicates(self, tmp_path):
        path = tmp_path / "g.edges"
        path.write_text("# comment\n0 1\n1 0\n0 1\n")
        g = gr.read_edge_list(path)
        assert g.n_edges == 1

    def test_malformed_line(self, tmp_path):
        path = tmp_path / "g.edges"
        path.write_text("0 1 2\n")
        with pytest.raises(gr.GraphError):
            gr.read_edge_list(path)
