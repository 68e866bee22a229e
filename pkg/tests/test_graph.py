import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from featprop.errors import EmptyGraphError, ParameterError, ShapeError, StageError
from featprop.graph import (
    InteractionMatrix,
    ItemItemGraph,
    Stage,
    build_item_graph,
    degree_vector,
    normalize_symmetric,
    project_item_item,
    propagate_step,
    sparsify_topn,
    unreachable_items,
)

import oracles

# frozen from oracles.dense_pipeline_graph on the path 0-1-2
INV_SQRT2 = 0.7071067811865476


def binary_matrices(max_users=50, max_items=50):
    shapes = st.tuples(st.integers(1, max_users), st.integers(1, max_items))
    return shapes.flatmap(lambda s: arrays(np.int64, s, elements=st.integers(0, 1)))


def sparsified(dense):
    return ItemItemGraph.from_dense(dense, Stage.SPARSIFIED)


PATH3 = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=float)


class TestInteractionMatrix:
    def test_from_pairs_collapses_duplicates(self):
        r = InteractionMatrix.from_pairs([0, 0, 1, 0], [2, 1, 0, 2], 2, 3)
        assert r.nnz == 3
        np.testing.assert_array_equal(r.user_items(0), [1, 2])
        np.testing.assert_array_equal(r.to_dense(), [[0, 1, 1], [1, 0, 0]])

    def test_rejects_out_of_range_item(self):
        with pytest.raises(ParameterError):
            InteractionMatrix(1, 2, np.array([0, 1]), np.array([5]))

    def test_rejects_duplicate_in_row(self):
        with pytest.raises(ParameterError):
            InteractionMatrix(1, 3, np.array([0, 2]), np.array([1, 1]))

    def test_rejects_decreasing_offsets(self):
        with pytest.raises((ParameterError, ShapeError)):
            InteractionMatrix(2, 3, np.array([0, 2, 1]), np.array([0, 1]))

    def test_empty_rows_allowed(self):
        r = InteractionMatrix(3, 2, np.array([0, 0, 1, 1]), np.array([1]))
        assert r.user_items(0).size == 0 and r.user_items(2).size == 0

    def test_from_dense_rejects_non_binary(self):
        with pytest.raises(ParameterError):
            InteractionMatrix.from_dense([[2, 0]])


class TestProject:
    def test_two_users_three_items(self):
        g = project_item_item(InteractionMatrix.from_dense([[1, 1, 0], [0, 1, 1]]))
        assert g.stage is Stage.RAW_CO_COUNTS
        np.testing.assert_array_equal(g.to_dense(), [[1, 1, 0], [1, 2, 1], [0, 1, 1]])

    def test_single_interaction_is_diagonal_only(self):
        g = project_item_item(InteractionMatrix.from_dense([[1, 0, 0]]))
        expected = np.zeros((3, 3))
        expected[0, 0] = 1
        np.testing.assert_array_equal(g.to_dense(), expected)

    def test_no_interactions(self):
        g = project_item_item(InteractionMatrix.from_dense(np.zeros((3, 4), dtype=int)))
        assert g.adjacency.nnz == 0
        assert g.num_items == 4

    def test_zero_items_is_error(self):
        with pytest.raises(EmptyGraphError):
            project_item_item(InteractionMatrix(2, 0, np.zeros(3), np.zeros(0)))

    @settings(max_examples=60, deadline=None)
    @given(binary_matrices())
    def test_matches_dense_product_exactly(self, r):
        g = project_item_item(InteractionMatrix.from_dense(r))
        dense = g.to_dense()
        np.testing.assert_array_equal(dense, r.T @ r)
        np.testing.assert_array_equal(dense, dense.T)
        assert g.adjacency.dtype == np.int64


class TestSparsify:
    def test_tie_break_by_ascending_index(self):
        co = np.zeros((5, 5), dtype=int)
        co[0] = [0, 5, 3, 3, 1]
        co[:, 0] = co[0]
        g = ItemItemGraph.from_dense(co)
        directed = oracles.dense_topn(co, 2)
        np.testing.assert_array_equal(directed[0], [0, 1, 1, 0, 0])
        out = sparsify_topn(g, 2).to_dense()
        # row 0 picks columns 1 and 2; columns 3, 4 keep item 0 as their only neighbour
        np.testing.assert_array_equal(out, np.maximum(directed, directed.T))
        assert out[0, 3] == 1  # added by symmetrization from row 3

    def test_large_n_keeps_all_positive_offdiagonal(self):
        co = np.array([[4, 2, 0], [2, 3, 1], [0, 1, 1]])
        out = sparsify_topn(ItemItemGraph.from_dense(co), 10).to_dense()
        np.testing.assert_array_equal(out, [[0, 1, 0], [1, 0, 1], [0, 1, 0]])

    def test_zero_row_stays_zero(self):
        co = np.array([[0, 0, 0], [0, 2, 1], [0, 1, 2]])
        out = sparsify_topn(ItemItemGraph.from_dense(co), 3).to_dense()
        assert not out[0].any() and not out[:, 0].any()

    def test_diagonal_can_compete_when_included(self):
        co = np.array([[9, 1], [1, 1]])
        out = sparsify_topn(ItemItemGraph.from_dense(co), 1, exclude_diagonal=False).to_dense()
        # row 1 is a tie between columns 0 and 1; column 0 wins
        np.testing.assert_array_equal(out, [[1, 1], [1, 0]])
        directed = oracles.dense_topn(co, 1, exclude_diagonal=False)
        np.testing.assert_array_equal(out, np.maximum(directed, directed.T))

    def test_n_zero_rejected(self):
        with pytest.raises(ParameterError):
            sparsify_topn(ItemItemGraph.from_dense(np.eye(2)), 0)

    def test_wrong_stage_rejected(self):
        with pytest.raises(StageError):
            sparsify_topn(sparsified(PATH3), 1)

    def test_top1_cardinality_before_symmetrization(self):
        r = InteractionMatrix.from_dense([[1, 1, 0], [0, 1, 1], [1, 1, 0]])
        co = project_item_item(r).to_dense()
        directed = oracles.dense_topn(co, 1)
        assert (directed.sum(axis=1) == 1).all()

    @settings(max_examples=60, deadline=None)
    @given(binary_matrices(30, 30), st.integers(1, 6), st.booleans())
    def test_matches_bruteforce_and_is_symmetric_binary(self, r, n, excl):
        co_graph = project_item_item(InteractionMatrix.from_dense(r))
        out = sparsify_topn(co_graph, n, excl)
        dense = out.to_dense()
        directed = oracles.dense_topn(r.T @ r, n, excl)
        np.testing.assert_array_equal(dense, np.maximum(directed, directed.T))
        assert out.is_symmetric()
        assert set(np.unique(dense)) <= {0.0, 1.0}
        assert np.all((r.T @ r)[dense > 0] > 0)


class TestNormalize:
    def test_single_edge_weight_one(self):
        g = normalize_symmetric(sparsified([[0, 1], [1, 0]]))
        np.testing.assert_array_equal(g.to_dense(), [[0, 1], [1, 0]])
        np.testing.assert_array_equal(g.degree, [1, 1])

    def test_path_graph(self):
        g = normalize_symmetric(sparsified(PATH3))
        a = g.to_dense()
        assert a[0, 1] == pytest.approx(INV_SQRT2, abs=1e-15)
        assert a[1, 2] == pytest.approx(INV_SQRT2, abs=1e-15)
        assert a[0, 2] == 0
        dense, _, _ = oracles.dense_pipeline_graph([[1, 1, 0], [0, 1, 1]])
        np.testing.assert_allclose(a, dense, atol=1e-15)

    def test_isolated_item_all_zero(self):
        adj = np.zeros((3, 3))
        adj[0, 1] = adj[1, 0] = 1
        g = normalize_symmetric(sparsified(adj))
        a = g.to_dense()
        assert not a[2].any() and not a[:, 2].any()
        assert g.degree[2] == 0
        assert g.isolated().tolist() == [False, False, True]

    @settings(max_examples=40, deadline=None)
    @given(binary_matrices(20, 20), st.integers(1, 5))
    def test_spectral_radius_at_most_one(self, r, n):
        g = build_item_graph(InteractionMatrix.from_dense(r), n)
        a = g.to_dense()
        assert np.all((a >= 0) & (a <= 1))
        if a.size:
            assert np.max(np.abs(np.linalg.eigvalsh(a))) <= 1 + 1e-8


class TestPropagateStep:
    def test_empty_graph_gives_zeros(self):
        g = normalize_symmetric(sparsified(np.zeros((3, 3))))
        out = propagate_step(g, np.arange(6.0).reshape(3, 2))
        np.testing.assert_array_equal(out, np.zeros((3, 2)))

    def test_unit_edge_swaps_rows(self):
        g = normalize_symmetric(sparsified([[0, 1], [1, 0]]))
        f = np.array([[3.0], [7.0]])
        np.testing.assert_array_equal(propagate_step(g, f), [[7.0], [3.0]])
        np.testing.assert_array_equal(f, [[3.0], [7.0]])

    def test_path_graph(self):
        g = normalize_symmetric(sparsified(PATH3))
        out = propagate_step(g, np.array([[1.0], [0.0], [0.0]]))
        np.testing.assert_allclose(out, [[0], [0.7071], [0]], atol=1e-4)
        np.testing.assert_allclose(out, [[0], [INV_SQRT2], [0]], atol=1e-6)

    def test_shape_mismatch(self):
        g = normalize_symmetric(sparsified(PATH3))
        with pytest.raises(ShapeError):
            propagate_step(g, np.zeros((4, 1)))

    def test_requires_normalized_graph(self):
        with pytest.raises(StageError):
            propagate_step(sparsified(PATH3), np.zeros((3, 1)))

    @settings(max_examples=40, deadline=None)
    @given(binary_matrices(50, 50), st.integers(1, 8), st.integers(0, 2**32 - 1))
    def test_matches_dense_product(self, r, dim, seed):
        g = build_item_graph(InteractionMatrix.from_dense(r), 5)
        f = np.random.default_rng(seed).normal(size=(r.shape[1], dim))
        np.testing.assert_allclose(propagate_step(g, f), g.to_dense() @ f, rtol=0, atol=1e-10)


class TestDegree:
    def test_empty(self):
        g = ItemItemGraph.from_dense(np.zeros((4, 4)), Stage.SPARSIFIED)
        np.testing.assert_array_equal(degree_vector(g), np.zeros(4))

    def test_single_edge(self):
        adj = np.zeros((4, 4))
        adj[0, 1] = adj[1, 0] = 1
        np.testing.assert_array_equal(degree_vector(sparsified(adj)), [1, 1, 0, 0])

    def test_raw_counts(self):
        g = project_item_item(InteractionMatrix.from_dense([[1, 1, 0], [0, 1, 1]]))
        np.testing.assert_array_equal(degree_vector(g), [2, 4, 2])


class TestStructure:
    def test_deterministic_structure(self):
        rng = np.random.default_rng(3)
        r = (rng.random((40, 30)) < 0.2).astype(int)
        a = build_item_graph(InteractionMatrix.from_dense(r), 4).adjacency
        b = build_item_graph(InteractionMatrix.from_dense(r), 4).adjacency
        for x, y in ((a.indptr, b.indptr), (a.indices, b.indices), (a.data, b.data)):
            assert x.tobytes() == y.tobytes()

    def test_columns_sorted(self):
        g = ItemItemGraph(sp.csr_matrix((np.ones(2), ([0, 0], [2, 1])), shape=(3, 3)),
                          Stage.SPARSIFIED)
        assert g.adjacency.has_sorted_indices
        np.testing.assert_array_equal(g.adjacency.indices, [1, 2])

    def test_graph_is_immutable(self):
        g = normalize_symmetric(sparsified(PATH3))
        with pytest.raises(ValueError):
            g.adjacency.data[0] = 5.0

    def test_num_edges(self):
        assert sparsified(PATH3).num_edges == 2

    def test_unreachable_matches_bfs(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            r, _, known = oracles.random_instance(rng, 20, 25, density=0.08)
            g = build_item_graph(InteractionMatrix.from_dense(r), 3)
            _, _, sym = oracles.dense_pipeline_graph(r, 3)
            assert unreachable_items(g, known).tolist() == oracles.bfs_unreachable(sym, known)
