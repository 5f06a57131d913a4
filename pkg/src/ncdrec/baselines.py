"""Graph-based reference recommenders over the user-item-block graph.

Five node-similarity methods on the undirected tripartite graph whose nodes
are users, items, and blocks, with edges for "user rated item" and "item
belongs to block": the Laplacian pseudoinverse, the matrix-forest
similarity, Katz attenuation, average first passage times of the natural
random walk, and average commute times.

These exist for desk-scale comparison; every one of them works on a dense
N x N matrix (N = n + m + K), so construction refuses graphs beyond
``MAX_DENSE_NODES`` nodes.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .datasets import Decomposition, RatingsDataset
from .errors import (ConvergenceError, DisconnectedGraphError, ParameterError,
                     SizeGuardError)
from .ranking import RankingList

#: the similarity methods all invert (or pseudo-invert) an N x N matrix
MAX_DENSE_NODES = 20_000

#: how each method's scores are turned into a ranking
DIRECTIONS = {
    "l-pinv": "max-similarity",
    "mfa": "max-similarity",
    "katz": "max-similarity",
    "fp": "min-distance",
    "ct": "min-distance",
}


@dataclass(frozen=True)
class TripartiteGraph:
    """Undirected weighted graph on users, items, and blocks.

    Node layout: users occupy 0..n-1, items n..n+m-1, blocks n+m..N-1.
    """

    n_users: int
    n_items: int
    n_blocks: int
    A: sp.csr_array

    @property
    def n_nodes(self) -> int:
        return self.n_users + self.n_items + self.n_blocks

    def user_node(self, user: int) -> int:
        return user

    def item_node(self, item: int) -> int:
        return self.n_users + item

    def block_node(self, block: int) -> int:
        return self.n_users + self.n_items + block

    def item_nodes(self) -> np.ndarray:
        return np.arange(self.n_users, self.n_users + self.n_items)

    def degrees(self) -> np.ndarray:
        return np.asarray(self.A.sum(axis=1)).ravel()

    def laplacian(self) -> sp.csr_array:
        return sp.csr_array(sp.diags_array(self.degrees()) - self.A)

    def components(self) -> list:
        """Connected components as sorted node lists (iterative BFS)."""
        indptr, indices = self.A.indptr, self.A.indices
        seen = np.zeros(self.n_nodes, dtype=bool)
        comps = []
        for start in range(self.n_nodes):
            if seen[start]:
                continue
            stack = [start]
            seen[start] = True
            comp = []
            while stack:
                v = stack.pop()
                comp.append(v)
                for w in indices[indptr[v]:indptr[v + 1]]:
                    if not seen[w]:
                        seen[w] = True
                        stack.append(int(w))
            comps.append(sorted(comp))
        return comps


@dataclass(frozen=True)
class SimilarityMatrix:
    """Dense pairwise node scores plus the ranking direction they imply."""

    values: np.ndarray
    method: str
    direction: str

    def item_scores(self, graph: TripartiteGraph, user: int) -> np.ndarray:
        """Scores of all item nodes relative to the user's node."""
        return self.values[graph.user_node(user), graph.item_nodes()]


def build_graph(dataset: RatingsDataset, decomposition: Decomposition | None = None,
                weighting: str = "binary") -> TripartiteGraph:
    """Assemble the graph from rating and membership edges.

    ``weighting`` is ``"binary"`` (unit weight per edge, the default) or
    ``"rating"`` (user-item edges weighted by the rating value).  Without a
    decomposition the graph degenerates to the bipartite user-item case.
    """
    if weighting not in ("binary", "rating"):
        raise ParameterError(f"unknown weighting {weighting!r}")
    n, m = dataset.n_users, dataset.n_items
    K = decomposition.n_blocks if decomposition is not None else 0
    N = n + m + K
    if N > MAX_DENSE_NODES:
        raise SizeGuardError(
            f"graph has {N} nodes; the dense baseline methods invert an "
            f"N x N matrix and are limited to N <= {MAX_DENSE_NODES}"
        )
    users, items, values = dataset.triples()
    w = values if weighting == "rating" else np.ones_like(values)
    rows = [users, items + n]
    cols = [items + n, users]
    data = [w, w]
    if decomposition is not None:
        agg = decomposition.aggregation.tocoo()
        rows += [agg.row + n, agg.col + n + m]
        cols += [agg.col + n + m, agg.row + n]
        data += [np.ones(agg.nnz), np.ones(agg.nnz)]
    A = sp.csr_array(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(N, N),
    )
    A.sum_duplicates()
    return TripartiteGraph(n, m, K, A)


def _require_connected(graph: TripartiteGraph, what: str) -> None:
    comps = graph.components()
    if len(comps) > 1:
        sizes = ", ".join(str(len(c)) for c in comps)
        raise DisconnectedGraphError(
            f"{what} requires a connected graph; found {len(comps)} "
            f"components of sizes [{sizes}]",
            components=comps,
        )


def laplacian_pinv(graph: TripartiteGraph) -> SimilarityMatrix:
    """Moore-Penrose pseudoinverse of the graph Laplacian.

    Uses the rank-one shift identity: add ee^T / N to make the Laplacian
    invertible, invert, subtract the shift back.  Only valid on connected
    graphs (otherwise the shifted matrix is still singular).
    """
    _require_connected(graph, "the Laplacian pseudoinverse")
    N = graph.n_nodes
    L = graph.laplacian().toarray()
    shift = np.full((N, N), 1.0 / N)
    pinv = np.linalg.inv(L - shift) + shift
    pinv = 0.5 * (pinv + pinv.T)  # symmetrize away inversion roundoff
    return SimilarityMatrix(pinv, "l-pinv", DIRECTIONS["l-pinv"])


def mfa_similarity(graph: TripartiteGraph) -> SimilarityMatrix:
    """Matrix-forest similarity (I + L)^{-1}; always well defined."""
    L = graph.laplacian().toarray()
    M = np.linalg.inv(np.eye(graph.n_nodes) + L)
    M = 0.5 * (M + M.T)
    return SimilarityMatrix(M, "mfa", DIRECTIONS["mfa"])


def spectral_radius_estimate(A, iterations: int = 200, seed: int = 0) -> float:
    """Power-iteration estimate of the largest eigenvalue magnitude."""
    rng = np.random.default_rng(seed)
    v = rng.random(A.shape[0]) + 0.1
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iterations):
        w = A @ v
        norm = np.linalg.norm(w)
        if norm == 0:
            return 0.0
        v = w / norm
        new_lam = float(v @ (A @ v))
        if abs(new_lam - lam) <= 1e-12 * max(abs(new_lam), 1.0):
            return new_lam
        lam = new_lam
    return lam


def katz_similarity(graph: TripartiteGraph,
                    attenuation: float | None = None) -> SimilarityMatrix:
    """Attenuated path counting: (I - a A)^{-1} - I.

    The series converges only for a < 1/rho(A); the default picks
    0.9 / rho(A) from a power-iteration estimate of the spectral radius.
    """
    A = graph.A.toarray()
    rho = spectral_radius_estimate(graph.A)
    if attenuation is None:
        attenuation = 0.9 / rho if rho > 0 else 0.5
    if attenuation < 0:
        raise ParameterError(f"attenuation must be >= 0, got {attenuation}")
    if rho > 0 and attenuation >= 1.0 / rho:
        raise ParameterError(
            f"attenuation {attenuation} >= 1/spectral-radius ({1.0 / rho:.6g}); "
            "the Katz series diverges"
        )
    N = graph.n_nodes
    K = np.linalg.solve(np.eye(N) - attenuation * A, np.eye(N)) - np.eye(N)
    K = 0.5 * (K + K.T)
    return SimilarityMatrix(K, "katz", DIRECTIONS["katz"])


def _transition_matrix(graph: TripartiteGraph) -> sp.csr_array:
    deg = graph.degrees()
    if np.any(deg == 0):
        isolated = np.flatnonzero(deg == 0)
        raise DisconnectedGraphError(
            f"graph has {isolated.size} isolated node(s); the random walk "
            f"is undefined there (first: {isolated[:5].tolist()})"
        )
    return sp.csr_array(sp.diags_array(1.0 / deg) @ graph.A)


def first_passage_batch(graph: TripartiteGraph, targets,
                        tol: float = 1e-8, maxit: int = 1_000_000) -> np.ndarray:
    """Average first passage times to each target, iterated to a fixed point.

    Returns an (n_nodes, len(targets)) array whose (i, t) entry is the
    expected number of steps for the natural random walk to first reach
    ``targets[t]`` from node i (zero at the target itself).  The sweep
    ``FP <- 1 + P FP`` converges linearly; iteration stops when the
    estimated remaining error (successive change divided by the observed
    contraction ratio) falls below ``tol``.
    """
    _require_connected(graph, "first passage times")
    P = _transition_matrix(graph)
    targets = np.asarray(targets, dtype=np.intp)
    F = np.zeros((graph.n_nodes, targets.size))
    cols = np.arange(targets.size)
    prev_change = np.inf
    for _ in range(maxit):
        F_new = 1.0 + P @ F
        F_new[targets, cols] = 0.0
        change = float(np.abs(F_new - F).max())
        F = F_new
        if change == 0.0:
            return F
        ratio = change / prev_change if np.isfinite(prev_change) else 1.0
        if ratio < 1.0 and change * ratio / (1.0 - ratio) <= tol:
            return F
        prev_change = change
    raise ConvergenceError(
        f"first-passage iteration did not reach tol={tol} within {maxit} sweeps"
    )


def first_passage(graph: TripartiteGraph, target: int,
                  tol: float = 1e-8, maxit: int = 1_000_000) -> np.ndarray:
    """Average first passage time to ``target`` from every node."""
    return first_passage_batch(graph, [target], tol=tol, maxit=maxit)[:, 0]


def commute_times(graph: TripartiteGraph, tol: float = 1e-8) -> SimilarityMatrix:
    """Average commute times CT(i, j) = FP(i|j) + FP(j|i) for all pairs.

    Runs one first-passage solve per node; quadratic memory, cubic-ish
    time -- strictly a small-graph tool.
    """
    N = graph.n_nodes
    if N > 2000:
        warnings.warn(f"commute_times solves {N} first-passage systems; "
                      "this will be slow")
    FP = first_passage_batch(graph, np.arange(N), tol=tol)
    CT = FP + FP.T
    return SimilarityMatrix(CT, "ct", DIRECTIONS["ct"])


def rank_from_similarity(sim: SimilarityMatrix, graph: TripartiteGraph,
                         user: int, direction: str | None = None,
                         rated_items=()) -> RankingList:
    """Rank all items for a user by their node scores against the user node.

    ``direction`` defaults to the similarity's own: descending scores for
    similarity methods, ascending for the distance-like ones.  Items the
    user already rated are dropped from the ranking.
    """
    if direction is None:
        direction = sim.direction
    if direction not in ("max-similarity", "min-distance"):
        raise ParameterError(f"unknown ranking direction {direction!r}")
    scores = sim.item_scores(graph, user)
    if not np.all(np.isfinite(scores)):
        raise ParameterError("similarity scores contain non-finite values")
    items = np.arange(graph.n_items)
    rated = np.asarray(sorted(int(i) for i in rated_items), dtype=np.intp)
    keep = np.ones(graph.n_items, dtype=bool)
    keep[rated] = False
    return RankingList.from_scores(items[keep], scores[keep],
                                   ascending=direction == "min-distance")
