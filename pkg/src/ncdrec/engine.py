"""Matrix-free truncated SVD of the perturbed rating matrix.

The matrix being factored is ``G = R + eps * Z @ X.T`` -- the sparse rating
matrix plus a low-rank term that propagates each user's per-block mean
ratings to all block members.  G is never formed: both operator directions
are evaluated as sums of sparse products through the factors.

The factorization itself is a Golub-Kahan bidiagonalization with full
reorthogonalization of both vector sequences, restarted by augmentation:
when a cycle's Ritz triplets are not yet accurate enough, the basis is
collapsed onto them plus the pending residual direction and the
bidiagonalization continues from there.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .datasets import RatingsDataset
from .errors import ConvergenceError, ParameterError
from .matrices import NcdFactors
from .ranking import RankingList

_BREAKDOWN_REL = 1e-14


@dataclass(frozen=True)
class EngineConfig:
    """Parameters of the truncated SVD engine.

    epsilon      weight of the low-rank perturbation
    f            number of singular triplets to return
    M            bidiagonalization steps per restart cycle
                 (default max(2f, f + 20), capped at min(n, m))
    tol          relative residual tolerance per triplet
    max_restarts cap on restart cycles
    seed         RNG seed for the start vector
    """

    epsilon: float = 0.01
    f: int = 10
    M: int | None = None
    tol: float = 1e-6
    max_restarts: int = 200
    seed: int = 0

    def resolve_M(self, n: int, m: int) -> int:
        cap = min(n, m)
        M = self.M if self.M is not None else max(2 * self.f, self.f + 20)
        return min(M, cap)

    def validate(self, n: int, m: int) -> None:
        if self.epsilon <= 0:
            raise ParameterError(f"epsilon must be > 0, got {self.epsilon}")
        if self.f < 1:
            raise ParameterError(f"f must be >= 1, got {self.f}")
        M = self.resolve_M(n, m)
        if not self.f < M <= min(n, m):
            raise ParameterError(
                f"need 1 <= f < M <= min(n, m); got f={self.f}, M={M}, min={min(n, m)}"
            )
        if self.tol <= 0:
            raise ParameterError(f"tol must be > 0, got {self.tol}")


# ---------------------------------------------------------------------------
# matrix-free operators

def apply_G(factors: NcdFactors, R: sp.csr_array, epsilon: float,
            p: np.ndarray) -> np.ndarray:
    """(R + eps * Z X^T) @ p without materializing the product."""
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (R.shape[1],):
        raise ValueError(f"expected vector of length {R.shape[1]}, got {p.shape}")
    phi = factors.X.T @ p
    return R @ p + epsilon * (factors.Z @ phi)


def apply_Gt(factors: NcdFactors, R: sp.csr_array, epsilon: float,
             q: np.ndarray) -> np.ndarray:
    """(R + eps * Z X^T)^T @ q without materializing the product."""
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (R.shape[0],):
        raise ValueError(f"expected vector of length {R.shape[0]}, got {q.shape}")
    phi = factors.Z.T @ q
    return R.T @ q + epsilon * (factors.X @ phi)


class GOperator:
    """Matrix-free handle for G = R + eps * Z X^T."""

    def __init__(self, R: sp.csr_array, factors: NcdFactors, epsilon: float):
        if factors.Z.shape[0] != R.shape[0] or factors.X.shape[0] != R.shape[1]:
            raise ValueError("factor dimensions do not match the rating matrix")
        self.R = R
        self.factors = factors
        self.epsilon = float(epsilon)

    @property
    def shape(self) -> tuple:
        return self.R.shape

    def matvec(self, p: np.ndarray) -> np.ndarray:
        return apply_G(self.factors, self.R, self.epsilon, p)

    def rmatvec(self, q: np.ndarray) -> np.ndarray:
        return apply_Gt(self.factors, self.R, self.epsilon, q)

    def dense(self) -> np.ndarray:
        """Materialized G; test/debug use only."""
        return self.R.toarray() + self.epsilon * (
            self.factors.Z.toarray() @ self.factors.X.toarray().T
        )


class MatrixOperator:
    """Adapter exposing any 2-d array (dense or sparse) as an operator."""

    def __init__(self, matrix):
        self.matrix = matrix

    @property
    def shape(self) -> tuple:
        return self.matrix.shape

    def matvec(self, p):
        return np.asarray(self.matrix @ p).ravel()

    def rmatvec(self, q):
        return np.asarray(self.matrix.T @ q).ravel()


def operator_for(dataset: RatingsDataset, factors: NcdFactors,
                 epsilon: float) -> GOperator:
    return GOperator(dataset.R, factors, epsilon)


# ---------------------------------------------------------------------------
# bidiagonalization

@dataclass
class LanczosState:
    """Basis and coefficients after a bidiagonalization sweep.

    P (m x j) and Q (n x j) have orthonormal columns; B (j x j) is upper
    bidiagonal and satisfies G @ P = Q @ B.  ``p_next`` is the pending
    (j+1)-th right vector with coupling strength ``rho``; it is None when
    the sweep exhausted the row space exactly.
    """

    P: np.ndarray
    Q: np.ndarray
    B: np.ndarray
    p_next: np.ndarray | None
    rho: float


def _project_out(v: np.ndarray, basis: np.ndarray) -> tuple:
    """Subtract the projection of ``v`` onto the columns of ``basis`` twice
    (classical Gram-Schmidt repeated, which restores orthogonality to
    machine precision).  Returns the deflated vector and the summed
    coefficients."""
    c = basis.T @ v
    v = v - basis @ c
    c2 = basis.T @ v
    v = v - basis @ c2
    return v, c + c2


def _random_orthonormal(rng, basis: np.ndarray, dim: int) -> np.ndarray:
    for _ in range(50):
        v = rng.standard_normal(dim)
        v, _ = _project_out(v, basis)
        norm = np.linalg.norm(v)
        if norm > 1e-8:
            return v / norm
    raise ConvergenceError("could not generate a vector orthogonal to the basis")


def _extend_bidiagonalization(op, P, Q, B, j, M, rng, scale) -> int:
    """Grow the factorization from ``j`` to ``M`` columns in place.

    ``scale`` is a running estimate of the largest singular value, used for
    the breakdown threshold.  Returns the updated scale.
    """
    n, m = op.shape
    while j < M:
        bd_tol = _BREAKDOWN_REL * scale
        # next right vector
        r = op.rmatvec(Q[:, j - 1]) - B[j - 1, j - 1] * P[:, j - 1]
        r, _ = _project_out(r, P[:, :j])
        b_off = float(np.linalg.norm(r))
        reseeded = False
        if b_off <= bd_tol:
            P[:, j] = _random_orthonormal(rng, P[:, :j], m)
            b_off = 0.0
            reseeded = True
        else:
            P[:, j] = r / b_off
            B[j - 1, j] = b_off
        # next left vector
        w = op.matvec(P[:, j]) - b_off * Q[:, j - 1]
        w, coeffs = _project_out(w, Q[:, :j])
        if reseeded:
            # after a re-seed the new direction couples to every previous
            # left vector; keep those coefficients so G P = Q B stays exact.
            B[:j, j] = coeffs
        b_diag = float(np.linalg.norm(w))
        if b_diag <= bd_tol:
            Q[:, j] = _random_orthonormal(rng, Q[:, :j], n)
            B[j, j] = 0.0
        else:
            Q[:, j] = w / b_diag
            B[j, j] = b_diag
        scale = max(scale, b_diag, b_off)
        j += 1
    return scale


def _trailing_residual(op, P, Q, B, j, scale):
    """The pending right direction after column ``j`` and its coupling norm."""
    r = op.rmatvec(Q[:, j - 1]) - B[j - 1, j - 1] * P[:, j - 1]
    r, _ = _project_out(r, P[:, :j])
    rho = float(np.linalg.norm(r))
    if rho <= _BREAKDOWN_REL * scale:
        return None, 0.0
    return r / rho, rho


def partial_lbd(config: EngineConfig, op, start: np.ndarray,
                rng=None) -> LanczosState:
    """Run one full bidiagonalization sweep of M steps from ``start``.

    ``start`` must be a unit vector of length m.  Both vector sequences are
    explicitly reorthogonalized at every step; a breakdown (vanishing
    coupling coefficient) is handled by continuing with a fresh random
    direction orthogonal to the basis built so far.
    """
    n, m = op.shape
    config.validate(n, m)
    M = config.resolve_M(n, m)
    if rng is None:
        rng = np.random.default_rng(config.seed)
    start = np.asarray(start, dtype=np.float64)
    norm = np.linalg.norm(start)
    if abs(norm - 1.0) > 1e-8:
        raise ParameterError(f"start vector must have unit norm, got {norm}")

    P = np.zeros((m, M))
    Q = np.zeros((n, M))
    B = np.zeros((M, M))
    P[:, 0] = start / norm
    q = op.matvec(P[:, 0])
    b11 = float(np.linalg.norm(q))
    if b11 == 0.0:
        Q[:, 0] = _random_orthonormal(rng, Q[:, :0], n)
        B[0, 0] = 0.0
    else:
        Q[:, 0] = q / b11
        B[0, 0] = b11
    scale = _extend_bidiagonalization(op, P, Q, B, 1, M, rng, b11)
    p_next, rho = _trailing_residual(op, P, Q, B, M, scale)
    return LanczosState(P=P, Q=Q, B=B, p_next=p_next, rho=rho)


# ---------------------------------------------------------------------------
# restarted extraction

@dataclass(frozen=True)
class SvdFactors:
    """Truncated singular triplets: U (n x f), sigma (f,), V (m x f)."""

    U: np.ndarray
    sigma: np.ndarray
    V: np.ndarray

    @property
    def f(self) -> int:
        return len(self.sigma)

    def truncate(self, f: int) -> "SvdFactors":
        if not 1 <= f <= self.f:
            raise ParameterError(f"cannot truncate {self.f} triplets to {f}")
        return SvdFactors(self.U[:, :f], self.sigma[:f], self.V[:, :f])

    def user_scores(self, user: int) -> np.ndarray:
        """Row ``user`` of U diag(sigma) V^T."""
        return (self.U[user] * self.sigma) @ self.V.T

    def scores_matrix(self) -> np.ndarray:
        """The full dense score matrix; prefer :meth:`user_scores` at scale."""
        return (self.U * self.sigma) @ self.V.T


def _canonical_signs(U: np.ndarray, V: np.ndarray) -> None:
    """Flip singular-vector pairs so each right vector's largest-magnitude
    entry is positive; makes repeated runs comparable."""
    for j in range(V.shape[1]):
        idx = int(np.argmax(np.abs(V[:, j])))
        if V[idx, j] < 0:
            V[:, j] *= -1.0
            U[:, j] *= -1.0


def restarted_svd(config: EngineConfig, op, rng=None,
                  callback=None) -> SvdFactors:
    """Compute the leading ``config.f`` singular triplets of the operator.

    Each cycle runs the bidiagonalization out to M columns, takes the SVD of
    the small projected matrix, and lifts the leading triplets through the
    bases.  A triplet counts as converged when both directional residuals
    fall below ``tol`` times the current largest singular value estimate.
    Unconverged cycles restart from the Ritz vectors plus the pending
    residual direction.

    Raises :class:`ConvergenceError` (carrying the best residuals achieved)
    if ``max_restarts`` cycles do not suffice.
    """
    n, m = op.shape
    config.validate(n, m)
    M = config.resolve_M(n, m)
    f = config.f
    if rng is None:
        rng = np.random.default_rng(config.seed)

    start = rng.standard_normal(m)
    start /= np.linalg.norm(start)
    state = partial_lbd(config, op, start, rng=rng)
    P, Q, B = state.P, state.Q, state.B
    p_next, rho = state.p_next, state.rho
    scale = float(np.abs(B).max())

    best_residuals = None
    for restart in range(config.max_restarts + 1):
        Ub, s, Vbt = np.linalg.svd(B)
        U_r = Q @ Ub[:, :f]
        V_r = P @ Vbt[:f].T
        sigma = s[:f]

        sigma_scale = s[0] if s[0] > 0 else 1.0
        est_left = rho * np.abs(Ub[-1, :f])  # bounds ||G^T u - sigma v||
        res_right = np.empty(f)
        for jj in range(f):
            res_right[jj] = np.linalg.norm(op.matvec(V_r[:, jj]) - sigma[jj] * U_r[:, jj])
        residuals = np.maximum(est_left, res_right)
        best_residuals = residuals if best_residuals is None else np.minimum(best_residuals, residuals)
        if callback is not None:
            callback(restart, sigma, residuals)

        if np.all(residuals <= config.tol * sigma_scale):
            U, V = U_r.copy(), V_r.copy()
            _canonical_signs(U, V)
            return SvdFactors(U=U, sigma=sigma.copy(), V=V)
        if restart == config.max_restarts:
            break

        # collapse onto the leading Ritz triplets plus the pending direction
        k = min(f + 3, M - 1)
        if p_next is None:
            p_next = _random_orthonormal(rng, P @ Vbt[:k].T, m)
        P_new = np.zeros((m, M))
        Q_new = np.zeros((n, M))
        B_new = np.zeros((M, M))
        P_new[:, :k] = P @ Vbt[:k].T
        Q_new[:, :k] = Q @ Ub[:, :k]
        B_new[np.arange(k), np.arange(k)] = s[:k]
        P_new[:, k] = p_next
        w = op.matvec(p_next)
        w, coeffs = _project_out(w, Q_new[:, :k])
        B_new[:k, k] = coeffs
        b = float(np.linalg.norm(w))
        if b <= _BREAKDOWN_REL * scale:
            Q_new[:, k] = _random_orthonormal(rng, Q_new[:, :k], n)
            B_new[k, k] = 0.0
        else:
            Q_new[:, k] = w / b
            B_new[k, k] = b
        P, Q, B = P_new, Q_new, B_new
        scale = _extend_bidiagonalization(op, P, Q, B, k + 1, M, rng, scale)
        p_next, rho = _trailing_residual(op, P, Q, B, M, scale)

    raise ConvergenceError(
        f"SVD did not converge within {config.max_restarts} restarts "
        f"(worst residual {float(best_residuals.max()):.3e})",
        residuals=best_residuals,
    )


def compute_svd(dataset: RatingsDataset, factors: NcdFactors,
                config: EngineConfig) -> SvdFactors:
    """Convenience wrapper: build the operator and run the restarted SVD."""
    return restarted_svd(config, operator_for(dataset, factors, config.epsilon))


def recommend_main(svd: SvdFactors, user: int,
                   rated_items=()) -> RankingList:
    """Rank every item for ``user`` by their row of the projected matrix.

    Already-rated items are carried as the ranking's excluded set so the
    presentation layer can drop them.
    """
    if not 0 <= user < svd.U.shape[0]:
        raise IndexError(f"user index {user} out of range")
    scores = svd.user_scores(user)
    return RankingList.from_scores(np.arange(svd.V.shape[0]), scores,
                                   excluded=rated_items)


# ---------------------------------------------------------------------------
# persistence

def save_factors(svd: SvdFactors, path) -> None:
    """Write the triplets to an .npz container; the round trip is exact."""
    np.savez(Path(path), U=svd.U, sigma=svd.sigma, V=svd.V)


def load_factors(path) -> SvdFactors:
    with np.load(Path(path)) as data:
        return SvdFactors(U=data["U"], sigma=data["sigma"], V=data["V"])


class BuildTimer:
    """Tiny helper collecting step timings for build logs."""

    def __init__(self):
        self.steps = []

    def time(self, label: str):
        timer = self

        class _Ctx:
            def __enter__(self):
                self.t0 = time.perf_counter()
                return self

            def __exit__(self, *exc):
                timer.steps.append((label, time.perf_counter() - self.t0))
                return False

        return _Ctx()

    def lines(self) -> list:
        return [f"{label}: {dt:.3f}s" for label, dt in self.steps]
