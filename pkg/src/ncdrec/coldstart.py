"""Stationary-distribution rankings for newly added users.

Each new user is ranked by the stationary distribution of an item-space
Markov chain that restarts to the user's preference vector with weight
(1 - alpha) and otherwise follows a mix of the direct co-rating proximity H
(weight beta) and the block proximity X @ Y (weight 1 - beta).  The chain's
transition matrix is never assembled; the batch power iteration works on the
sparse factors directly.

When the block coupling graph is connected the stationary distribution is
unique and strictly positive on every item, no matter how few ratings the
user has -- that coverage guarantee is what :func:`verify_coverage` reports.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .datasets import Decomposition
from .errors import ConvergenceError, ParameterError
from .matrices import (BlockCouplingGraph, DirectProximity, NcdFactors,
                       build_coupling_graph, connected_components)


@dataclass(frozen=True)
class ColdStartConfig:
    """Chain mix weights and iteration controls.

    alpha  weight of the proximity mix (1 - alpha restarts to the user's
           preference vector); must lie strictly inside (0, 1)
    beta   weight of direct vs. block proximity inside the mix
    tol    convergence threshold: max over batch rows of the L1 change
           between successive iterates
    maxit  iteration cap
    """

    alpha: float = 0.01
    beta: float = 0.75
    tol: float = 1e-8
    maxit: int = 200

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ParameterError(f"alpha must be in (0, 1), got {self.alpha}")
        if not 0.0 < self.beta < 1.0:
            raise ParameterError(f"beta must be in (0, 1), got {self.beta}")
        if self.tol <= 0:
            raise ParameterError(f"tol must be > 0, got {self.tol}")
        if self.maxit < 1:
            raise ParameterError(f"maxit must be >= 1, got {self.maxit}")


@dataclass(frozen=True)
class ColdStartBatch:
    """Converged stationary rows for a batch of users.

    ``Omega`` holds the preference vectors the chains restart to; ``Pi`` the
    stationary distributions, one dense row per user in the batch.
    """

    Omega: sp.csr_array
    Pi: np.ndarray
    iterations: int
    residual: float


def coldstart_stationary(config: ColdStartConfig, proximity: DirectProximity,
                         factors: NcdFactors, Omega,
                         on_iterate=None) -> ColdStartBatch:
    """Batch power iteration for the stationary rows of all given users.

    Starts from the users' own normalized ratings and iterates
    ``Pi <- alpha*beta * Pi H + alpha*(1-beta) * (Pi X) Y + (1-alpha) * Omega``
    until the largest per-row L1 change drops below ``config.tol``.

    ``on_iterate``, if given, is called with each new iterate (used by
    invariant checks).  Raises :class:`ConvergenceError` carrying the final
    per-row residuals if ``config.maxit`` is exceeded.
    """
    Omega = sp.csr_array(Omega, dtype=np.float64)
    H, X, Y = proximity.H, factors.X, factors.Y
    if Omega.shape[1] != H.shape[0]:
        raise ValueError(
            f"Omega has {Omega.shape[1]} columns, proximity covers {H.shape[0]} items"
        )
    row_sums = np.asarray(Omega.sum(axis=1)).ravel()
    if Omega.shape[0] and not np.allclose(row_sums, 1.0, atol=1e-9):
        raise ParameterError("rows of Omega must be preference vectors summing to 1")

    alpha, beta = config.alpha, config.beta
    Omega_dense = Omega.toarray()
    Pi = Omega_dense.copy()
    if Pi.shape[0] == 0:
        return ColdStartBatch(Omega=Omega, Pi=Pi, iterations=0, residual=0.0)

    restart = (1.0 - alpha) * Omega_dense
    row_residuals = np.full(Pi.shape[0], np.inf)
    for iteration in range(1, config.maxit + 1):
        Phi = Pi @ X
        Pi_hat = alpha * beta * (Pi @ H) + alpha * (1.0 - beta) * (Phi @ Y) + restart
        row_residuals = np.abs(Pi_hat - Pi).sum(axis=1)
        Pi = Pi_hat
        if on_iterate is not None:
            on_iterate(Pi)
        residual = float(row_residuals.max())
        if residual <= config.tol:
            return ColdStartBatch(Omega=Omega, Pi=Pi, iterations=iteration,
                                  residual=residual)
    raise ConvergenceError(
        f"cold-start power iteration did not reach tol={config.tol} "
        f"within {config.maxit} iterations (residual {row_residuals.max():.3e})",
        residuals=row_residuals,
    )


@dataclass(frozen=True)
class CoverageReport:
    """Whether the full-itemspace coverage guarantee applies.

    ``connected`` is the connectivity of the block coupling graph; when it
    is False, ``components`` lists the block groups between which no overlap
    exists, so the operator can see exactly where coverage may be lost.
    """

    connected: bool
    n_blocks: int
    components: tuple

    @property
    def guarantee_holds(self) -> bool:
        return self.connected


def verify_coverage(decomposition: Decomposition,
                    graph: BlockCouplingGraph | None = None) -> CoverageReport:
    """Check the coverage precondition: a connected block coupling graph."""
    if graph is None:
        graph = build_coupling_graph(decomposition)
    components = connected_components(graph)
    return CoverageReport(
        connected=len(components) <= 1,
        n_blocks=graph.n_vertices,
        components=tuple(tuple(c) for c in components),
    )
