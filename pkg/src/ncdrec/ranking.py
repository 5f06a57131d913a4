"""Per-user item rankings."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class RankingList:
    """An ordering of candidate items, best first, with their scores.

    Ties in score are broken by ascending item index, so a ranking built
    from the same scores is always identical.  ``excluded`` optionally
    records items (e.g. already rated in training) that downstream
    consumers should drop before presenting the list.
    """

    items: np.ndarray
    scores: np.ndarray
    excluded: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if len(self.items) != len(self.scores):
            raise ValueError("items and scores must have equal length")

    def __len__(self) -> int:
        return len(self.items)

    @classmethod
    def from_scores(cls, items, scores, ascending: bool = False,
                    excluded=()) -> "RankingList":
        """Order ``items`` by score (descending unless ``ascending``),
        breaking ties by ascending item index."""
        items = np.asarray(items, dtype=np.intp)
        scores = np.asarray(scores, dtype=np.float64)
        if items.shape != scores.shape:
            raise ValueError("items and scores must have equal length")
        key = scores if ascending else -scores
        order = np.lexsort((items, key))
        return cls(items[order], scores[order], frozenset(int(i) for i in excluded))

    def rank_of(self, item: int) -> int:
        """1-based position of ``item`` in the list."""
        hits = np.flatnonzero(self.items == item)
        if hits.size == 0:
            raise KeyError(f"item {item} not in ranking")
        return int(hits[0]) + 1

    def top(self, n: int) -> np.ndarray:
        return self.items[:n]

    def without_excluded(self) -> "RankingList":
        if not self.excluded:
            return self
        keep = np.asarray([int(i) not in self.excluded for i in self.items])
        return RankingList(self.items[keep], self.scores[keep])
