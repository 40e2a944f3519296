import numpy as np
import pytest
import scipy.sparse as sp

from ilpc.errors import SolverError
from ilpc.graph import AffinityGraph, GraphConfig, build_graph
from ilpc.propagation import PropagationConfig, make_label_matrix, propagate

from .test_graph import dense_graph_oracle


def dense_propagation_oracle(normalized_adj: np.ndarray, y: np.ndarray, alpha: float) -> np.ndarray:
    t = normalized_adj.shape[0]
    return np.linalg.solve(np.eye(t) - alpha * normalized_adj, y)


def path_graph_3() -> AffinityGraph:
    # unit-weight path 0-1-2, degree-normalized
    w = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 0.0]])
    deg = w.sum(axis=1)
    dinv = 1.0 / np.sqrt(deg)
    adj = dinv[:, None] * w * dinv[None, :]
    return AffinityGraph(adjacency=sp.csr_matrix(adj), degree=deg, node_count=3)


class TestLabelMatrix:
    def test_two_supports(self):
        y = make_label_matrix(np.array([0, 1]), n_way=2, total=3)
        np.testing.assert_array_equal(y, [[1, 0], [0, 1], [0, 0]])

    def test_empty_support(self):
        y = make_label_matrix(np.array([], dtype=np.int64), n_way=3, total=4)
        np.testing.assert_array_equal(y, np.zeros((4, 3)))

    def test_column_sums_count_labels(self):
        support = np.array([0, 0, 2, 1, 2, 2])
        y = make_label_matrix(support, n_way=3, total=10)
        np.testing.assert_array_equal(y.sum(axis=0), [2, 1, 3])

    def test_label_out_of_range(self):
        with pytest.raises(ValueError, match=r"\[0, 2\)"):
            make_label_matrix(np.array([0, 2]), n_way=2, total=3)
        with pytest.raises(ValueError, match="exceed"):
            make_label_matrix(np.array([0, 1]), n_way=2, total=1)


class TestPropagate:
    def test_alpha_zero_returns_labels(self):
        g = path_graph_3()
        y = make_label_matrix(np.array([0, 1]), 2, 3)
        z = propagate(g, y, PropagationConfig(alpha=0.0))
        np.testing.assert_array_equal(z, y)

    def test_edgeless_graph_returns_labels(self):
        g = build_graph(np.eye(2), GraphConfig(k=1, gamma=3.0))  # orthogonal: no edges
        y = make_label_matrix(np.array([0]), 2, 2)
        z = propagate(g, y, PropagationConfig(alpha=0.7))
        np.testing.assert_allclose(z, y, atol=1e-15)

    def test_path_graph_matches_explicit_inverse(self):
        g = path_graph_3()
        y = np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 1.0]])
        z = propagate(g, y, PropagationConfig(alpha=0.5))
        expected = dense_propagation_oracle(g.adjacency.toarray(), y, 0.5)
        np.testing.assert_allclose(z, expected, atol=1e-10)

    @pytest.mark.parametrize("seed", range(5))
    def test_random_graphs_match_dense_oracle(self, seed):
        rng = np.random.default_rng(seed)
        t, n_way = 30, 4
        x = rng.normal(size=(t, 6))
        x /= np.linalg.norm(x, axis=1, keepdims=True)
        g = build_graph(x, GraphConfig(k=5, gamma=3.0))
        support_y = rng.integers(0, n_way, size=8)
        y = make_label_matrix(support_y, n_way, t)
        z = propagate(g, y, PropagationConfig(alpha=0.8, solver_tol=1e-12))
        dense_adj = dense_graph_oracle(x, k=5, gamma=3.0)
        expected = dense_propagation_oracle(dense_adj, y, 0.8)
        np.testing.assert_allclose(z, expected, atol=1e-8)

    def test_linearity(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(20, 4))
        g = build_graph(x, GraphConfig(k=4, gamma=3.0))
        cfg = PropagationConfig(alpha=0.6)
        y1 = make_label_matrix(np.array([0, 1]), 2, 20)
        y2 = make_label_matrix(np.array([1, 0]), 2, 20)
        z = propagate(g, y1 + y2, cfg)
        np.testing.assert_allclose(z, propagate(g, y1, cfg) + propagate(g, y2, cfg), atol=1e-6)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(4)
        t = 18
        x = rng.normal(size=(t, 5))
        cfg = PropagationConfig(alpha=0.7)
        support_y = np.array([0, 1, 2])
        y = make_label_matrix(support_y, 3, t)

        z = propagate(build_graph(x, GraphConfig(k=4)), y, cfg)
        perm = rng.permutation(t)
        zp = propagate(build_graph(x[perm], GraphConfig(k=4)), y[perm], cfg)
        np.testing.assert_allclose(zp, z[perm], atol=1e-8)

    def test_connected_nodes_get_positive_mass(self):
        g = path_graph_3()
        y = make_label_matrix(np.array([0]), 1, 3)
        z = propagate(g, y, PropagationConfig(alpha=0.5))
        assert (z[:, 0] > 0).all()  # nodes 1, 2 reachable from labeled node 0

    def test_nonnegative_up_to_tolerance(self):
        rng = np.random.default_rng(9)
        x = rng.normal(size=(40, 6))
        x /= np.linalg.norm(x, axis=1, keepdims=True)
        g = build_graph(x, GraphConfig(k=6, gamma=3.0))
        y = make_label_matrix(rng.integers(0, 3, size=10), 3, 40)
        cfg = PropagationConfig(alpha=0.9)
        z = propagate(g, y, cfg)
        assert z.min() >= -cfg.solver_tol

    def test_solver_budget_exhaustion_reports_residual(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(50, 6))
        x /= np.linalg.norm(x, axis=1, keepdims=True)
        g = build_graph(x, GraphConfig(k=8, gamma=1.0))
        y = make_label_matrix(rng.integers(0, 3, size=12), 3, 50)
        with pytest.raises(SolverError, match="residual"):
            propagate(g, y, PropagationConfig(alpha=0.95, solver_max_iter=1))

    def test_shape_mismatch(self):
        g = path_graph_3()
        with pytest.raises(ValueError, match="does not match"):
            propagate(g, np.zeros((4, 2)), PropagationConfig())

    def test_config_validation(self):
        with pytest.raises(ValueError):
            PropagationConfig(alpha=1.0)
        with pytest.raises(ValueError):
            PropagationConfig(alpha=-0.1)
        with pytest.raises(ValueError):
            PropagationConfig(solver_tol=0.0)
