"""End-to-end model build: factor matrices, truncated SVD, cold-start merge.

The build mirrors the two-lane design: every user gets a score row from the
truncated SVD of the perturbed rating matrix, and users with too few ratings
to trust that projection (at most ``coldstart_max_ratings`` of them) have
their rows replaced by the stationary distributions of the cold-start chain.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .coldstart import (ColdStartBatch, ColdStartConfig, CoverageReport,
                        coldstart_stationary, verify_coverage)
from .datasets import Decomposition, RatingsDataset, preference_matrix
from .engine import (BuildTimer, EngineConfig, SvdFactors, operator_for,
                     restarted_svd, save_factors, load_factors)
from .errors import DataError
from .matrices import (DirectProximity, NcdFactors, build_direct_proximity,
                       build_factors)
from .ranking import RankingList

DEFAULT_COLDSTART_MAX_RATINGS = 10


@dataclass(frozen=True)
class NcdrecModel:
    """A built recommender: SVD rows for established users, stationary
    rows for the cold-start set, and the bookkeeping to route between them."""

    dataset: RatingsDataset
    svd: SvdFactors
    coldstart_users: np.ndarray
    pi_sparse: np.ndarray | None
    coverage: CoverageReport
    factors: NcdFactors | None = None
    proximity: DirectProximity | None = None

    @property
    def n_users(self) -> int:
        return self.dataset.n_users

    @property
    def n_items(self) -> int:
        return self.dataset.n_items

    def is_coldstart_user(self, user: int) -> bool:
        return bool(np.isin(user, self.coldstart_users))

    def user_scores(self, user: int) -> np.ndarray:
        """The user's merged score row over all items."""
        if not 0 <= user < self.n_users:
            raise DataError(f"user index {user} out of range")
        if self.pi_sparse is not None:
            pos = np.searchsorted(self.coldstart_users, user)
            if pos < len(self.coldstart_users) and self.coldstart_users[pos] == user:
                return self.pi_sparse[pos]
        return self.svd.user_scores(user)

    def ranking(self, user: int) -> RankingList:
        scores = self.user_scores(user)
        rated = self.dataset.rated_items(user)
        return RankingList.from_scores(np.arange(self.n_items), scores,
                                       excluded=rated)

    def recommend(self, user: int, n: int) -> RankingList:
        """Top-n unrated items for the user."""
        if n < 1:
            raise DataError(f"n must be >= 1, got {n}")
        full = self.ranking(user).without_excluded()
        return RankingList(full.items[:n], full.scores[:n])


def find_new_users(dataset: RatingsDataset,
                   max_ratings: int = DEFAULT_COLDSTART_MAX_RATINGS) -> np.ndarray:
    """Users with at most ``max_ratings`` ratings, routed to cold start."""
    counts = dataset.user_rating_counts()
    return np.flatnonzero(counts <= max_ratings)


def build_model(dataset: RatingsDataset, decomposition: Decomposition,
                engine_config: EngineConfig,
                coldstart_config: ColdStartConfig | None = None,
                coldstart_max_ratings: int = DEFAULT_COLDSTART_MAX_RATINGS,
                extra_coldstart_users=None,
                keep_matrices: bool = False,
                timer: BuildTimer | None = None) -> NcdrecModel:
    """Build the full model on a dataset/decomposition pair.

    Steps: detect the new users and solve their stationary rows, factor the
    perturbed rating matrix, then overwrite exactly the new users' rows with
    the cold-start results.  ``extra_coldstart_users`` forces additional
    users through the cold-start lane regardless of their rating count
    (used by the new-user evaluation protocol).
    """
    if coldstart_config is None:
        coldstart_config = ColdStartConfig()
    timer = timer or BuildTimer()

    with timer.time("factors"):
        factors = build_factors(dataset, decomposition)
    with timer.time("proximity"):
        proximity = build_direct_proximity(dataset)
    with timer.time("coverage"):
        coverage = verify_coverage(decomposition)

    with timer.time("coldstart"):
        new_users = find_new_users(dataset, coldstart_max_ratings)
        if extra_coldstart_users is not None:
            new_users = np.union1d(new_users,
                                   np.asarray(extra_coldstart_users, dtype=np.intp))
        pi_sparse = None
        if new_users.size:
            omega = preference_matrix(dataset, new_users)
            batch = coldstart_stationary(coldstart_config, proximity, factors, omega)
            pi_sparse = batch.Pi

    with timer.time("svd"):
        op = operator_for(dataset, factors, engine_config.epsilon)
        svd = restarted_svd(engine_config, op)

    return NcdrecModel(
        dataset=dataset,
        svd=svd,
        coldstart_users=new_users,
        pi_sparse=pi_sparse,
        coverage=coverage,
        factors=factors if keep_matrices else None,
        proximity=proximity if keep_matrices else None,
    )


# ---------------------------------------------------------------------------
# persistence

def save_model(model: NcdrecModel, directory) -> None:
    """Serialize a model into a directory; the round trip is exact."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_factors(model.svd, directory / "svd.npz")
    sp.save_npz(directory / "R.npz", sp.csr_matrix(model.dataset.R))
    np.savez(directory / "ids.npz",
             user_ids=model.dataset.user_ids,
             item_ids=model.dataset.item_ids)
    if model.pi_sparse is not None:
        np.savez(directory / "coldstart.npz",
                 users=model.coldstart_users, pi=model.pi_sparse)
    meta = {
        "n_users": model.n_users,
        "n_items": model.n_items,
        "n_ratings": model.dataset.n_ratings,
        "f": model.svd.f,
        "coldstart_users": int(model.coldstart_users.size),
        "coverage": {
            "connected": model.coverage.connected,
            "n_blocks": model.coverage.n_blocks,
            "components": [list(c) for c in model.coverage.components],
        },
    }
    (directory / "meta.json").write_text(json.dumps(meta, indent=2) + "\n",
                                         encoding="utf-8")
    if model.factors is not None:
        for name, mat in (("X", model.factors.X), ("Y", model.factors.Y),
                          ("Z", model.factors.Z), ("H", model.proximity.H),
                          ("C", model.proximity.C)):
            sp.save_npz(directory / f"{name}.npz", sp.csr_matrix(mat))


def load_model(directory) -> NcdrecModel:
    directory = Path(directory)
    meta = json.loads((directory / "meta.json").read_text(encoding="utf-8"))
    svd = load_factors(directory / "svd.npz")
    R = sp.csr_array(sp.load_npz(directory / "R.npz"))
    with np.load(directory / "ids.npz") as ids:
        user_ids = ids["user_ids"]
        item_ids = ids["item_ids"]
    dataset = RatingsDataset(R.shape[0], R.shape[1], R, user_ids, item_ids)
    cs_path = directory / "coldstart.npz"
    if cs_path.exists():
        with np.load(cs_path) as cs:
            coldstart_users = cs["users"]
            pi_sparse = cs["pi"]
    else:
        coldstart_users = np.empty(0, dtype=np.intp)
        pi_sparse = None
    cov = meta["coverage"]
    coverage = CoverageReport(
        connected=cov["connected"],
        n_blocks=cov["n_blocks"],
        components=tuple(tuple(c) for c in cov["components"]),
    )
    factors = proximity = None
    if (directory / "X.npz").exists():
        X = sp.csr_array(sp.load_npz(directory / "X.npz"))
        Y = sp.csr_array(sp.load_npz(directory / "Y.npz"))
        Z = sp.csr_array(sp.load_npz(directory / "Z.npz"))
        H = sp.csr_array(sp.load_npz(directory / "H.npz"))
        C = sp.csr_array(sp.load_npz(directory / "C.npz"))
        factors = NcdFactors(X=X, Y=Y, Z=Z)
        row_sums = np.asarray(C.sum(axis=1)).ravel()
        proximity = DirectProximity(H=H, C=C,
                                    uniform_rows=np.flatnonzero(row_sums == 0))
    return NcdrecModel(
        dataset=dataset,
        svd=svd,
        coldstart_users=coldstart_users,
        pi_sparse=pi_sparse,
        coverage=coverage,
        factors=factors,
        proximity=proximity,
    )
