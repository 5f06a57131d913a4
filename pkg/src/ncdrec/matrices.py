"""Decomposition-derived matrices.

Builds the three factor matrices that encode block structure (X spreads an
item's mass over its blocks, Y spreads a block's mass over its items, Z holds
each user's mean rating per block), the direct item-item proximity pair
(C, H), and the block coupling graph with its connectivity test.

The two products these factors exist for are never materialized here:
the preference-propagation matrix Z @ X.T and the block proximity matrix
X @ Y stay in factored form.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .datasets import Decomposition, RatingsDataset
from .errors import DataError


def row_normalize(matrix, zero_rows: str = "error") -> sp.csr_array:
    """Divide each row by its sum.

    ``zero_rows`` selects the policy for all-zero rows: ``"error"``,
    ``"keep"`` (leave the row zero), or ``"uniform"`` (replace with a
    uniform distribution over all columns).
    """
    m = sp.csr_array(matrix, dtype=np.float64, copy=True)
    sums = np.asarray(m.sum(axis=1)).ravel()
    zero = sums == 0
    if zero.any():
        if zero_rows == "error":
            raise DataError(f"{int(zero.sum())} all-zero row(s) cannot be normalized")
        if zero_rows not in ("keep", "uniform"):
            raise ValueError(f"unknown zero-row policy {zero_rows!r}")
    inv = np.divide(1.0, sums, out=np.zeros_like(sums), where=sums != 0)
    m = sp.csr_array(sp.diags_array(inv) @ m)
    if zero.any() and zero_rows == "uniform":
        n_cols = m.shape[1]
        rows = np.repeat(np.flatnonzero(zero), n_cols)
        cols = np.tile(np.arange(n_cols), int(zero.sum()))
        fill = sp.csr_array(
            (np.full(rows.size, 1.0 / n_cols), (rows, cols)), shape=m.shape
        )
        m = sp.csr_array(m + fill)
    m.sum_duplicates()
    m.eliminate_zeros()
    return m


@dataclass(frozen=True)
class NcdFactors:
    """Sparse factors of the block-structure matrices.

    X: m x K, row-normalized block membership.
    Y: K x m, row-normalized transposed membership.
    Z: n x K, user's mean rating over the rated items of each block
       (zero where the user rated nothing in the block).
    """

    X: sp.csr_array
    Y: sp.csr_array
    Z: sp.csr_array

    @property
    def n_blocks(self) -> int:
        return self.X.shape[1]


def build_factors(dataset: RatingsDataset, decomposition: Decomposition) -> NcdFactors:
    """Build X, Y, Z from the ratings and the block membership matrix."""
    if decomposition.n_items != dataset.n_items:
        raise DataError(
            f"decomposition covers {decomposition.n_items} items, "
            f"dataset has {dataset.n_items}"
        )
    A = decomposition.aggregation
    X = row_normalize(A)
    Y = row_normalize(A.T)

    # Z = per-user block rating sums divided by per-user block rating counts.
    # Stored values of R are strictly positive, so sums and counts share one
    # sparsity pattern and the elementwise quotient is exact.
    sums = sp.csr_array(dataset.R @ A)
    pattern = dataset.R.copy()
    pattern.data = np.ones_like(pattern.data)
    counts = sp.csr_array(pattern @ A)
    Z = sp.csr_array(sums.multiply(counts.power(-1.0)))
    Z.sum_duplicates()
    Z.eliminate_zeros()
    return NcdFactors(X, Y, Z)


@dataclass(frozen=True)
class DirectProximity:
    """Co-rating Gram matrix C and its row-normalized transition matrix H.

    C[i, j] is the inner product of the rating columns of items i and j
    (zero on the diagonal).  H is C with each row scaled to sum to one;
    rows of C that are entirely zero (an item co-rated with nothing) fall
    back to the uniform distribution so H stays row stochastic.
    """

    H: sp.csr_array
    C: sp.csr_array
    uniform_rows: np.ndarray

    @property
    def n_items(self) -> int:
        return self.H.shape[0]


def build_direct_proximity(dataset: RatingsDataset) -> DirectProximity:
    """Build C and H without ever forming a dense item-item matrix."""
    R = dataset.R
    C = sp.csr_array(R.T @ R)
    C.setdiag(0.0)
    C.eliminate_zeros()
    C.sum_duplicates()
    row_sums = np.asarray(C.sum(axis=1)).ravel()
    uniform_rows = np.flatnonzero(row_sums == 0)
    H = row_normalize(C, zero_rows="uniform")
    return DirectProximity(H=H, C=C, uniform_rows=uniform_rows)


@dataclass(frozen=True)
class BlockCouplingGraph:
    """Undirected graph on blocks; an edge means the blocks share an item."""

    n_vertices: int
    edges: tuple

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def neighbors(self) -> list:
        adj = [[] for _ in range(self.n_vertices)]
        for a, b in self.edges:
            adj[a].append(b)
            adj[b].append(a)
        return adj


def build_coupling_graph(decomposition: Decomposition) -> BlockCouplingGraph:
    """Connect every pair of blocks whose intersection is non-empty."""
    A = decomposition.aggregation
    overlap = sp.csr_array(A.T @ A)  # (a, b) entry counts shared items
    overlap.setdiag(0)
    overlap.eliminate_zeros()
    coo = overlap.tocoo()
    edges = sorted({(int(a), int(b)) for a, b in zip(coo.row, coo.col) if a < b})
    return BlockCouplingGraph(decomposition.n_blocks, tuple(edges))


def connected_components(graph: BlockCouplingGraph) -> list:
    """Connected components as sorted vertex lists, iteratively (no recursion)."""
    adj = graph.neighbors()
    seen = np.zeros(graph.n_vertices, dtype=bool)
    components = []
    for start in range(graph.n_vertices):
        if seen[start]:
            continue
        stack = [start]
        seen[start] = True
        comp = []
        while stack:
            v = stack.pop()
            comp.append(v)
            for w in adj[v]:
                if not seen[w]:
                    seen[w] = True
                    stack.append(w)
        components.append(sorted(comp))
    return components


def is_connected(graph: BlockCouplingGraph) -> bool:
    """True iff the coupling graph has a single connected component."""
    return len(connected_components(graph)) <= 1


def write_coo_text(matrix, path) -> None:
    """Dump a sparse matrix as ``row col value`` lines for external checks."""
    coo = sp.coo_array(matrix)
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write(f"# {coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for i, j, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{i} {j} {v!r}\n")
