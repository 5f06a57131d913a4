"""Ranking quality and rank correlation metrics.

Two families live here.  The hit metrics (recall/precision curves, R-score,
NDCG, MRR) grade a ranked candidate list against item relevances.  The
agreement metrics (Kendall tau, Spearman rho, degree of agreement, NDPM)
compare a system ranking to a reference ranking over a shared item set,
with full tie accounting through :class:`PairCounts`.

Metrics that are undefined for a given input (an all-tied reference, a
zero-variance ranking) return NaN so callers can exclude them from
averages rather than silently biasing them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .ranking import RankingList

# ---------------------------------------------------------------------------
# hit metrics over ranked candidate lists

def recall_at(ranking: RankingList, test_item: int, n: int) -> int:
    """1 if the held-out item ranks in the top n, else 0."""
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    try:
        return int(ranking.rank_of(test_item) <= n)
    except KeyError:
        raise ParameterError(
            f"test item {test_item} is not in the candidate ranking"
        ) from None


def recall_curve(ranks, n_max: int = 20) -> np.ndarray:
    """Mean recall at each cutoff 1..n_max given per-case 1-based hit ranks."""
    ranks = np.asarray(ranks)
    cutoffs = np.arange(1, n_max + 1)
    return (ranks[:, None] <= cutoffs[None, :]).mean(axis=0)


def precision_curve(recall: np.ndarray) -> np.ndarray:
    """Precision at each cutoff under the one-relevant-item protocol.

    With a single relevant item per candidate list, precision@N is exactly
    recall@N / N; the (recall, precision) pairs form the reported curve.
    """
    recall = np.asarray(recall, dtype=np.float64)
    return recall / np.arange(1, len(recall) + 1)


def r_score(ranking: RankingList, relevance: np.ndarray, halflife: float,
            neutral: float = 0.0) -> float:
    """Exponentially decaying position utility.

    A relevant item at 1-based rank q contributes
    ``max(y - neutral, 0) / 2**((q - 1) / (halflife - 1))``.
    """
    if halflife <= 1:
        raise ParameterError(f"halflife must be > 1, got {halflife}")
    y = np.asarray(relevance, dtype=np.float64)[ranking.items]
    gains = np.maximum(y - neutral, 0.0)
    q = np.arange(1, len(ranking) + 1, dtype=np.float64)
    return float(np.sum(gains / np.exp2((q - 1.0) / (halflife - 1.0))))


def dcg_at(items: np.ndarray, relevance: np.ndarray, k: int) -> float:
    y = np.asarray(relevance, dtype=np.float64)[items[:k]]
    q = np.arange(1, min(k, len(items)) + 1, dtype=np.float64)
    return float(np.sum((np.exp2(y) - 1.0) / np.log2(2.0 + q)))


def ndcg_at(ranking: RankingList, relevance: np.ndarray, k: int) -> float:
    """Discounted cumulative gain at k, normalized by the ideal ordering."""
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")
    relevance = np.asarray(relevance, dtype=np.float64)
    dcg = dcg_at(ranking.items, relevance, k)
    ideal_items = ranking.items[np.argsort(-relevance[ranking.items], kind="stable")]
    idcg = dcg_at(ideal_items, relevance, k)
    if idcg == 0.0:
        return 0.0
    return dcg / idcg


def reciprocal_rank(ranking: RankingList, relevance: np.ndarray) -> float:
    """1 over the rank of the first relevant item; 0 if nothing relevant."""
    y = np.asarray(relevance, dtype=np.float64)[ranking.items]
    hits = np.flatnonzero(y > 0)
    if hits.size == 0:
        return 0.0
    return 1.0 / (int(hits[0]) + 1)


def mrr(reciprocal_ranks) -> float:
    rr = np.asarray(list(reciprocal_ranks), dtype=np.float64)
    if rr.size == 0:
        return math.nan
    return float(rr.mean())


# ---------------------------------------------------------------------------
# pairwise agreement between a reference and a system ranking

@dataclass(frozen=True)
class PairCounts:
    """Pair classification of two score vectors over one item set.

    concordant / discordant count pairs ordered the same/opposite way by
    both rankings; ref_ties and sys_ties count pairs tied in each ranking
    separately.  ``ref_decides_sys_ties`` is the remainder N - T_r - C - D:
    pairs the reference orders but the system ties.
    """

    concordant: int
    discordant: int
    total: int
    ref_ties: int
    sys_ties: int

    @property
    def ref_decides_sys_ties(self) -> int:
        return self.total - self.ref_ties - self.concordant - self.discordant

    @classmethod
    def from_scores(cls, reference, system, chunk: int = 4096) -> "PairCounts":
        """Classify all unordered pairs of two aligned score vectors."""
        r = np.asarray(reference, dtype=np.float64)
        s = np.asarray(system, dtype=np.float64)
        if r.shape != s.shape or r.ndim != 1:
            raise ValueError("reference and system scores must be aligned 1-d vectors")
        n = r.size
        total = n * (n - 1) // 2
        conc = disc = rt = st = 0
        # upper-triangle sweep in row chunks to bound memory at chunk * n
        for lo in range(0, n, chunk):
            hi = min(lo + chunk, n)
            dr = np.sign(r[lo:hi, None] - r[None, :])
            ds = np.sign(s[lo:hi, None] - s[None, :])
            mask = np.zeros((hi - lo, n), dtype=bool)
            for row, i in enumerate(range(lo, hi)):
                mask[row, i + 1:] = True
            prod = dr * ds
            conc += int(np.count_nonzero((prod > 0) & mask))
            disc += int(np.count_nonzero((prod < 0) & mask))
            rt += int(np.count_nonzero((dr == 0) & mask))
            st += int(np.count_nonzero((ds == 0) & mask))
        return cls(concordant=conc, discordant=disc, total=total,
                   ref_ties=rt, sys_ties=st)


def kendall_tau(reference, system) -> float:
    """Tie-adjusted rank correlation in [-1, 1]; NaN when the reference
    (or the system) ties every pair and the denominator vanishes."""
    pc = PairCounts.from_scores(reference, system)
    denom = math.sqrt(pc.total - pc.ref_ties) * math.sqrt(pc.total - pc.sys_ties)
    if denom == 0.0:
        return math.nan
    return (pc.concordant - pc.discordant) / denom


def _midranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman_rho(reference, system) -> float:
    """Pearson correlation of midrank scores; NaN on zero-variance input."""
    r = _midranks(np.asarray(reference, dtype=np.float64))
    s = _midranks(np.asarray(system, dtype=np.float64))
    r_c = r - r.mean()
    s_c = s - s.mean()
    denom = math.sqrt(float(r_c @ r_c)) * math.sqrt(float(s_c @ s_c))
    if denom == 0.0:
        return math.nan
    return float(r_c @ s_c) / denom


def ndpm(reference, system) -> float:
    """Normalized penalty for contradicted (full) and undecided (half)
    reference preferences; 0 is perfect, 1 contradicts everything.
    NaN when the reference asserts no preference at all."""
    pc = PairCounts.from_scores(reference, system)
    decided = pc.total - pc.ref_ties
    if decided == 0:
        return math.nan
    return (pc.discordant + 0.5 * pc.ref_decides_sys_ties) / decided


# ---------------------------------------------------------------------------
# degree of agreement

@dataclass(frozen=True)
class DoaTally:
    """Correct / checked pair counts behind one user's degree of agreement."""

    correct: int
    checked: int

    @property
    def value(self) -> float:
        return self.correct / self.checked if self.checked else math.nan


def doa_user(scores: np.ndarray, test_items, known_items) -> DoaTally | None:
    """Pairs (test item, never-seen item) ordered correctly by ``scores``.

    ``known_items`` are the items excluded from the comparison pool on top
    of the test items themselves (the user's training items).  Returns None
    when the user has no test item or no never-seen item to pair it with.
    """
    scores = np.asarray(scores, dtype=np.float64)
    test_items = np.asarray(sorted(set(int(i) for i in test_items)), dtype=np.intp)
    blocked = set(int(i) for i in known_items) | set(int(i) for i in test_items)
    pool = np.asarray([j for j in range(len(scores)) if j not in blocked],
                      dtype=np.intp)
    if test_items.size == 0 or pool.size == 0:
        return None
    pool_sorted = np.sort(scores[pool])
    correct = 0
    for t in test_items:
        correct += int(np.searchsorted(pool_sorted, scores[t], side="left"))
    return DoaTally(correct=correct, checked=int(test_items.size * pool.size))


def macro_doa(tallies) -> float:
    values = [t.value for t in tallies if t is not None and t.checked]
    if not values:
        return math.nan
    return float(np.mean(values))


def micro_doa(tallies) -> float:
    correct = sum(t.correct for t in tallies if t is not None)
    checked = sum(t.checked for t in tallies if t is not None)
    if checked == 0:
        return math.nan
    return correct / checked
