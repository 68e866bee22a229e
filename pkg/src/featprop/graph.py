"""Sparse interaction and item-item graphs.

The pipeline turns a binary user-item matrix ``R`` into a propagation operator
in three steps::

    co-counts     C = R^T R
    sparsified    S = OR(topn_rows(C), topn_rows(C)^T)     (binary)
    normalized    A = D^-1/2 S D^-1/2,  D = diag(row sums of S)

All matrices are stored as CSR with sorted column indices, so two graphs built
from the same input are identical array for array.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from featprop.errors import EmptyGraphError, ParameterError, ShapeError, StageError


@dataclass(frozen=True)
class InteractionMatrix:
    """Binary implicit-feedback matrix in compressed-row form.

    ``indptr`` has ``num_users + 1`` non-decreasing offsets and
    ``indices[indptr[u]:indptr[u+1]]`` are the (strictly increasing) items user
    ``u`` interacted with. Every stored entry has value 1.
    """

    num_users: int
    num_items: int
    indptr: np.ndarray
    indices: np.ndarray

    def __post_init__(self):
        indptr = np.asarray(self.indptr, dtype=np.int64)
        indices = np.asarray(self.indices, dtype=np.int64)
        if self.num_users < 0 or self.num_items < 0:
            raise ParameterError("negative matrix dimensions")
        if indptr.ndim != 1 or indptr.shape[0] != self.num_users + 1:
            raise ShapeError(
                f"indptr must have num_users + 1 = {self.num_users + 1} entries, "
                f"got {indptr.shape}"
            )
        if indptr[0] != 0 or indptr[-1] != indices.shape[0]:
            raise ShapeError("indptr does not span the indices array")
        if np.any(np.diff(indptr) < 0):
            raise ParameterError("row offsets must be non-decreasing")
        if indices.size:
            if indices.min() < 0 or indices.max() >= self.num_items:
                raise ParameterError("item index out of range")
            # strictly increasing within each row <=> sorted and no duplicates
            steps = np.diff(indices)
            row_starts = np.zeros(indices.shape[0], dtype=bool)
            row_starts[indptr[:-1][indptr[:-1] < indices.shape[0]]] = True
            if np.any((steps <= 0) & ~row_starts[1:]):
                raise ParameterError(
                    "item indices must be strictly increasing within each user "
                    "(duplicate or unsorted interaction)"
                )
        indptr.flags.writeable = False
        indices.flags.writeable = False
        object.__setattr__(self, "indptr", indptr)
        object.__setattr__(self, "indices", indices)

    @classmethod
    def from_pairs(cls, users, items, num_users=None, num_items=None):
        """Build from parallel (user, item) index arrays; duplicates collapse."""
        users = np.asarray(users, dtype=np.int64).ravel()
        items = np.asarray(items, dtype=np.int64).ravel()
        if users.shape != items.shape:
            raise ShapeError("users and items must have the same length")
        if num_users is None:
            num_users = int(users.max()) + 1 if users.size else 0
        if num_items is None:
            num_items = int(items.max()) + 1 if items.size else 0
        if users.size and (users.min() < 0 or users.max() >= num_users):
            raise ParameterError("user index out of range")
        if items.size and (items.min() < 0 or items.max() >= num_items):
            raise ParameterError("item index out of range")
        pairs = np.unique(users * max(num_items, 1) + items)
        u = pairs // max(num_items, 1)
        i = pairs % max(num_items, 1)
        indptr = np.zeros(num_users + 1, dtype=np.int64)
        np.cumsum(np.bincount(u, minlength=num_users), out=indptr[1:])
        return cls(num_users, num_items, indptr, i)

    @classmethod
    def from_dense(cls, array):
        array = np.asarray(array)
        if array.ndim != 2:
            raise ShapeError("dense interaction matrix must be 2-D")
        if np.any((array != 0) & (array != 1)):
            raise ParameterError("implicit feedback entries must be 0 or 1")
        u, i = np.nonzero(array)
        return cls.from_pairs(u, i, array.shape[0], array.shape[1])

    @property
    def nnz(self) -> int:
        return int(self.indices.shape[0])

    @property
    def shape(self):
        return (self.num_users, self.num_items)

    def user_items(self, user: int) -> np.ndarray:
        return self.indices[self.indptr[user]:self.indptr[user + 1]]

    def to_csr(self, dtype=np.int64) -> sp.csr_matrix:
        data = np.ones(self.nnz, dtype=dtype)
        return sp.csr_matrix(
            (data, self.indices.copy(), self.indptr.copy()), shape=self.shape
        )

    def to_dense(self) -> np.ndarray:
        return self.to_csr().toarray()


class Stage(enum.Enum):
    RAW_CO_COUNTS = "raw"
    SPARSIFIED = "sparsified"
    NORMALIZED = "normalized"


def _canonical(matrix) -> sp.csr_matrix:
    m = sp.csr_matrix(matrix, copy=True)
    m.eliminate_zeros()
    m.sum_duplicates()
    m.sort_indices()
    return m


@dataclass(frozen=True)
class ItemItemGraph:
    """Item x item weighted graph at one stage of the pipeline.

    ``degree`` is only set for the normalized stage, where it holds the row
    sums of the binary sparsified adjacency the weights were derived from.
    """

    adjacency: sp.csr_matrix
    stage: Stage
    degree: np.ndarray | None = field(default=None)

    def __post_init__(self):
        adj = _canonical(self.adjacency)
        if adj.shape[0] != adj.shape[1]:
            raise ShapeError(f"adjacency must be square, got {adj.shape}")
        if adj.nnz and adj.data.min() < 0:
            raise ParameterError("edge weights must be non-negative")
        for arr in (adj.data, adj.indices, adj.indptr):
            arr.flags.writeable = False
        object.__setattr__(self, "adjacency", adj)
        if self.degree is not None:
            deg = np.asarray(self.degree, dtype=np.float64)
            if deg.shape != (adj.shape[0],):
                raise ShapeError("degree vector length must equal num_items")
            deg.flags.writeable = False
            object.__setattr__(self, "degree", deg)

    @classmethod
    def from_dense(cls, array, stage=Stage.RAW_CO_COUNTS, degree=None):
        return cls(sp.csr_matrix(np.asarray(array)), stage, degree)

    @property
    def num_items(self) -> int:
        return self.adjacency.shape[0]

    @property
    def num_edges(self) -> int:
        """Undirected edge count; a self-loop counts once."""
        adj = self.adjacency
        loops = int(np.count_nonzero(adj.diagonal()))
        return (adj.nnz - loops) // 2 + loops

    def isolated(self) -> np.ndarray:
        """Boolean mask of items without any stored edge."""
        return np.diff(self.adjacency.indptr) == 0

    def is_symmetric(self) -> bool:
        diff = self.adjacency - self.adjacency.T
        return diff.nnz == 0 or not np.any(diff.data)

    def to_dense(self) -> np.ndarray:
        return self.adjacency.toarray()


def _require_stage(graph: ItemItemGraph, stage: Stage, op: str):
    if graph.stage is not stage:
        raise StageError(f"{op} expects a {stage.value} graph, got {graph.stage.value}")


def project_item_item(r: InteractionMatrix) -> ItemItemGraph:
    """Co-interaction counts ``R^T R``.

    Entry ``(i, j)`` is the number of users who interacted with both items;
    the diagonal holds item popularity.
    """
    if r.num_items == 0:
        raise EmptyGraphError("interaction matrix has zero items")
    csr = r.to_csr(np.int64)
    co = (csr.T @ csr).tocsr()
    return ItemItemGraph(co, Stage.RAW_CO_COUNTS)


def topn_rows(matrix: sp.csr_matrix, n: int, exclude_diagonal: bool = True) -> sp.csr_matrix:
    """Binary matrix keeping the ``n`` largest positive entries of every row.

    Ties at the cutoff go to the smaller column index.
    """
    coo = _canonical(matrix).tocoo()
    row, col, val = coo.row.astype(np.int64), coo.col.astype(np.int64), coo.data
    keep = val > 0
    if exclude_diagonal:
        keep &= row != col
    row, col, val = row[keep], col[keep], val[keep]
    # sort by row, then descending value, then ascending column
    order = np.lexsort((col, -val, row))
    row, col = row[order], col[order]
    starts = np.searchsorted(row, np.arange(matrix.shape[0]))
    rank = np.arange(row.shape[0]) - starts[row]
    sel = rank < n
    out = sp.csr_matrix(
        (np.ones(int(sel.sum()), dtype=np.float64), (row[sel], col[sel])),
        shape=matrix.shape,
    )
    return _canonical(out)


def sparsify_topn(g: ItemItemGraph, n: int = 20, exclude_diagonal: bool = True) -> ItemItemGraph:
    """Row-wise top-``n`` binarization followed by OR-symmetrization."""
    _require_stage(g, Stage.RAW_CO_COUNTS, "sparsify_topn")
    if int(n) != n or n < 1:
        raise ParameterError(f"n must be a positive integer, got {n!r}")
    directed = topn_rows(g.adjacency, int(n), exclude_diagonal)
    sym = directed.maximum(directed.T)
    return ItemItemGraph(sym, Stage.SPARSIFIED)


def inverse_sqrt_degree(degree: np.ndarray) -> np.ndarray:
    """``d ** -0.5`` with the convention ``0 ** -0.5 = 0`` for isolated items."""
    out = np.zeros_like(degree, dtype=np.float64)
    pos = degree > 0
    out[pos] = 1.0 / np.sqrt(degree[pos])
    return out


def normalize_symmetric(g: ItemItemGraph) -> ItemItemGraph:
    _require_stage(g, Stage.SPARSIFIED, "normalize_symmetric")
    adj = g.adjacency.astype(np.float64)
    degree = np.asarray(adj.sum(axis=1), dtype=np.float64).ravel()
    d = inverse_sqrt_degree(degree)
    coo = adj.tocoo()
    weights = d[coo.row] * coo.data * d[coo.col]
    norm = sp.csr_matrix((weights, (coo.row, coo.col)), shape=adj.shape)
    return ItemItemGraph(norm, Stage.NORMALIZED, degree)


def degree_vector(g: ItemItemGraph) -> np.ndarray:
    return np.asarray(g.adjacency.sum(axis=1), dtype=np.float64).ravel()


def propagate_step(g: ItemItemGraph, f: np.ndarray) -> np.ndarray:
    """One diffusion step ``A @ F`` with 64-bit accumulation."""
    _require_stage(g, Stage.NORMALIZED, "propagate_step")
    f = np.asarray(f)
    if f.ndim not in (1, 2) or f.shape[0] != g.num_items:
        raise ShapeError(
            f"feature matrix has {f.shape[0] if f.ndim else 0} rows, graph has "
            f"{g.num_items} items"
        )
    return g.adjacency @ f.astype(np.float64, copy=False)


def build_item_graph(r: InteractionMatrix, n: int = 20, exclude_diagonal: bool = True) -> ItemItemGraph:
    """Project, sparsify and normalize in one go."""
    return normalize_symmetric(sparsify_topn(project_item_item(r), n, exclude_diagonal))


def unreachable_items(g: ItemItemGraph, known: np.ndarray) -> np.ndarray:
    """Indices of unknown items whose connected component has no known item."""
    known = np.asarray(known, dtype=bool)
    if known.shape != (g.num_items,):
        raise ShapeError("known mask length must equal num_items")
    _, labels = connected_components(g.adjacency, directed=False)
    anchored = np.zeros(labels.max() + 1 if labels.size else 0, dtype=bool)
    anchored[labels[known]] = True
    return np.flatnonzero(~known & ~anchored[labels])
