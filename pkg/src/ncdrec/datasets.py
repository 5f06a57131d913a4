"""Rating datasets and item-space decompositions.

Loads rating files (MovieLens 100K / 1M, Yahoo-style triples) into a dense
0-based index space, loads genre/label files into overlapping item blocks,
and exposes the normalized per-user preference vectors every downstream
component consumes.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import CoverError, DataError, ModelAssumptionError, ParseError

RATING_FORMATS = ("movielens-100k", "movielens-1m", "yahoo-r2")
DECOMPOSITION_FORMATS = ("auto", "movielens-100k", "movielens-1m", "tsv")


@dataclass(frozen=True)
class RatingsDataset:
    """A set of nonnegative user-item ratings in a dense index space.

    ``R`` is the n_users x n_items sparse rating matrix, zero where unrated.
    ``user_ids`` / ``item_ids`` map dense indices back to the raw identifiers
    found in the source file.
    """

    n_users: int
    n_items: int
    R: sp.csr_array
    user_ids: np.ndarray
    item_ids: np.ndarray

    @property
    def n_ratings(self) -> int:
        return int(self.R.nnz)

    @cached_property
    def _user_lookup(self) -> dict:
        return {int(u): i for i, u in enumerate(self.user_ids)}

    @cached_property
    def _item_lookup(self) -> dict:
        return {int(v): j for j, v in enumerate(self.item_ids)}

    def user_index(self, raw_id: int) -> int:
        try:
            return self._user_lookup[int(raw_id)]
        except KeyError:
            raise DataError(f"unknown user id {raw_id!r}") from None

    def item_index(self, raw_id: int) -> int:
        try:
            return self._item_lookup[int(raw_id)]
        except KeyError:
            raise DataError(f"unknown item id {raw_id!r}") from None

    def has_item(self, raw_id: int) -> bool:
        return int(raw_id) in self._item_lookup

    def rated_items(self, user: int) -> np.ndarray:
        """Dense indices of the items rated by ``user``."""
        return self.R.indices[self.R.indptr[user]:self.R.indptr[user + 1]]

    def user_rating_counts(self) -> np.ndarray:
        return np.diff(self.R.indptr)

    def triples(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(user_index, item_index, value) arrays for all stored ratings."""
        coo = self.R.tocoo()
        return coo.row, coo.col, coo.data

    def validate(self) -> None:
        """Check the model assumptions: every user and every item has a rating,
        and all values are nonnegative."""
        row_nnz = np.diff(self.R.indptr)
        if np.any(row_nnz == 0):
            bad = np.flatnonzero(row_nnz == 0)[:5]
            raise ModelAssumptionError(
                f"{np.count_nonzero(row_nnz == 0)} user(s) have no ratings "
                f"(first indices: {bad.tolist()})"
            )
        col_nnz = np.diff(self.R.tocsc().indptr)
        if np.any(col_nnz == 0):
            bad = np.flatnonzero(col_nnz == 0)[:5]
            raise ModelAssumptionError(
                f"{np.count_nonzero(col_nnz == 0)} item(s) have no ratings "
                f"(first indices: {bad.tolist()})"
            )
        if self.R.nnz and self.R.data.min() < 0:
            raise ModelAssumptionError("negative rating values present")

    def subset(self, users, items, values) -> "RatingsDataset":
        """A dataset over the same index space holding only the given triples.

        Used by evaluation protocols to carve training sets out of a loaded
        dataset; unlike ``load_ratings`` it permits users/items that end up
        with zero ratings (their matrix rows/columns are simply empty).
        """
        R = sp.csr_array(
            (np.asarray(values, dtype=np.float64),
             (np.asarray(users), np.asarray(items))),
            shape=(self.n_users, self.n_items),
        )
        R.sum_duplicates()
        R.eliminate_zeros()
        return RatingsDataset(self.n_users, self.n_items, R,
                              self.user_ids, self.item_ids)


@dataclass(frozen=True)
class Decomposition:
    """An indexed family of overlapping item blocks covering the item set.

    ``aggregation`` is the m x K 0/1 membership matrix: entry (j, k) is 1
    iff item j belongs to block k.
    """

    blocks: tuple
    labels: tuple
    aggregation: sp.csr_array
    catch_all: int | None = field(default=None)

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    @property
    def n_items(self) -> int:
        return self.aggregation.shape[0]

    def blocks_of_item(self, item: int) -> np.ndarray:
        a = self.aggregation
        return a.indices[a.indptr[item]:a.indptr[item + 1]]

    def membership_counts(self) -> np.ndarray:
        """Number of blocks containing each item."""
        return np.diff(self.aggregation.indptr)

    def block_sizes(self) -> np.ndarray:
        return np.asarray([len(b) for b in self.blocks])

    def validate(self) -> None:
        counts = self.membership_counts()
        if np.any(counts == 0):
            missing = np.flatnonzero(counts == 0)
            raise CoverError(
                f"{missing.size} item(s) belong to no block "
                f"(first indices: {missing[:5].tolist()})"
            )
        if any(len(b) == 0 for b in self.blocks):
            raise DataError("empty block present")


def decomposition_from_blocks(blocks, n_items, labels=None,
                              missing="error") -> Decomposition:
    """Build a :class:`Decomposition` from item-index sets.

    Empty blocks are dropped with a warning.  Items covered by no block are
    either a hard :class:`CoverError` (``missing="error"``, the default) or
    collected into a synthetic catch-all block (``missing="catch-all"``).
    """
    if missing not in ("error", "catch-all"):
        raise ValueError(f"missing policy {missing!r} not recognized")
    if labels is None:
        labels = [f"block{k}" for k in range(len(blocks))]
    kept, kept_labels = [], []
    for label, block in zip(labels, blocks):
        items = np.unique(np.asarray(list(block), dtype=np.intp))
        if items.size == 0:
            warnings.warn(f"dropping empty block {label!r}")
            continue
        if items.size and (items[0] < 0 or items[-1] >= n_items):
            raise DataError(f"block {label!r} references item outside 0..{n_items - 1}")
        kept.append(items)
        kept_labels.append(str(label))
    if not kept:
        raise DataError("decomposition has no non-empty blocks")

    covered = np.zeros(n_items, dtype=bool)
    for items in kept:
        covered[items] = True
    catch_all = None
    if not covered.all():
        uncovered = np.flatnonzero(~covered)
        if missing == "error":
            raise CoverError(
                f"{uncovered.size} item(s) belong to no block "
                f"(first indices: {uncovered[:5].tolist()})"
            )
        catch_all = len(kept)
        kept.append(uncovered)
        kept_labels.append("__catch_all__")
        warnings.warn(
            f"assigned {uncovered.size} unlabeled item(s) to a catch-all block"
        )

    rows = np.concatenate(kept)
    cols = np.concatenate([np.full(b.size, k, dtype=np.intp)
                           for k, b in enumerate(kept)])
    agg = sp.csr_array(
        (np.ones(rows.size), (rows, cols)),
        shape=(n_items, len(kept)),
    )
    dec = Decomposition(tuple(kept), tuple(kept_labels), agg, catch_all)
    dec.validate()
    return dec


# ---------------------------------------------------------------------------
# rating file parsing

def _parse_rating_line(line: str, fmt: str):
    if fmt == "movielens-1m":
        parts = line.split("::")
    else:
        parts = line.split()
    want = 3 if fmt == "yahoo-r2" else 4
    if len(parts) < 3:
        raise ValueError(f"expected at least {want} fields, got {len(parts)}")
    return int(parts[0]), int(parts[1]), float(parts[2])


def read_rating_triples(path, fmt: str):
    """Parse a rating file into raw (user, item, value) arrays.

    Raises :class:`ParseError` with the offending line number on malformed
    input and on empty files.
    """
    if fmt not in RATING_FORMATS:
        raise ValueError(f"unknown rating format {fmt!r}; expected one of {RATING_FORMATS}")
    path = Path(path)
    users, items, values = [], [], []
    with path.open("r", encoding="utf-8", errors="replace") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                u, v, r = _parse_rating_line(line, fmt)
            except ValueError as exc:
                raise ParseError(path, line_no, str(exc)) from None
            if r < 0:
                raise ParseError(path, line_no, f"negative rating {r}")
            users.append(u)
            items.append(v)
            values.append(r)
    if not users:
        raise ParseError(path, 0, "no ratings found")
    return (np.asarray(users, dtype=np.int64),
            np.asarray(items, dtype=np.int64),
            np.asarray(values, dtype=np.float64))


def dataset_from_triples(users, items, values) -> RatingsDataset:
    """Densify raw-id triples into a :class:`RatingsDataset`.

    Raw ids are remapped to 0-based contiguous indices in ascending raw-id
    order; the remap tables are retained on the dataset.  Duplicate
    (user, item) pairs are an error.
    """
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    values = np.asarray(values, dtype=np.float64)
    if np.any(values < 0):
        raise DataError("negative rating values present")
    user_ids, u_idx = np.unique(users, return_inverse=True)
    item_ids, v_idx = np.unique(items, return_inverse=True)

    keys = u_idx.astype(np.int64) * len(item_ids) + v_idx
    uniq, counts = np.unique(keys, return_counts=True)
    if np.any(counts > 1):
        k = uniq[np.argmax(counts > 1)]
        uu, vv = divmod(int(k), len(item_ids))
        raise DataError(
            f"duplicate rating for user {int(user_ids[uu])}, item {int(item_ids[vv])}"
        )

    zero = values == 0
    if np.any(zero):
        warnings.warn(f"dropping {int(zero.sum())} zero-valued rating(s); "
                      "a zero value is indistinguishable from 'unrated'")
        u_idx, v_idx, values = u_idx[~zero], v_idx[~zero], values[~zero]

    R = sp.csr_array(
        (values, (u_idx, v_idx)),
        shape=(len(user_ids), len(item_ids)),
    )
    ds = RatingsDataset(len(user_ids), len(item_ids), R, user_ids, item_ids)
    ds.validate()
    return ds


def load_ratings(path, fmt: str) -> RatingsDataset:
    """Load a rating file under the named format and validate it.

    Formats: ``movielens-100k`` (tab-separated ``user item rating timestamp``),
    ``movielens-1m`` (``user::item::rating::timestamp``), ``yahoo-r2``
    (whitespace-separated ``user item rating`` triples).
    """
    users, items, values = read_rating_triples(path, fmt)
    return dataset_from_triples(users, items, values)


# ---------------------------------------------------------------------------
# decomposition file parsing

#: genre flag order in the MovieLens 100K ``u.item`` file
_ML100K_GENRES = (
    "unknown", "Action", "Adventure", "Animation", "Children's", "Comedy",
    "Crime", "Documentary", "Drama", "Fantasy", "Film-Noir", "Horror",
    "Musical", "Mystery", "Romance", "Sci-Fi", "Thriller", "War", "Western",
)


def _sniff_decomposition_format(path) -> str:
    with Path(path).open("r", encoding="latin-1") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if "::" in line:
                return "movielens-1m"
            if line.count("|") >= 20:
                return "movielens-100k"
            return "tsv"
    raise ParseError(path, 0, "empty decomposition file")


def _iter_item_labels(path, fmt: str):
    """Yield (line_no, raw_item_id, [labels]) from a decomposition file."""
    encoding = "latin-1" if fmt.startswith("movielens") else "utf-8"
    with Path(path).open("r", encoding=encoding, errors="replace") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if fmt == "movielens-100k":
                fields = line.split("|")
                if len(fields) < 5 + len(_ML100K_GENRES):
                    raise ParseError(path, line_no,
                                     f"expected >= {5 + len(_ML100K_GENRES)} fields, got {len(fields)}")
                flags = fields[-len(_ML100K_GENRES):]
                try:
                    raw = int(fields[0])
                    labels = [g for g, f in zip(_ML100K_GENRES, flags) if int(f) == 1]
                except ValueError as exc:
                    raise ParseError(path, line_no, str(exc)) from None
            elif fmt == "movielens-1m":
                fields = line.split("::")
                if len(fields) != 3:
                    raise ParseError(path, line_no, f"expected 3 '::' fields, got {len(fields)}")
                try:
                    raw = int(fields[0])
                except ValueError as exc:
                    raise ParseError(path, line_no, str(exc)) from None
                labels = [g for g in fields[2].split("|") if g]
            else:  # tsv: "item<TAB>label,label"
                fields = line.split("\t")
                if len(fields) != 2:
                    raise ParseError(path, line_no, f"expected 2 tab-separated fields, got {len(fields)}")
                try:
                    raw = int(fields[0])
                except ValueError as exc:
                    raise ParseError(path, line_no, str(exc)) from None
                labels = [s.strip() for s in fields[1].split(",") if s.strip()]
            yield line_no, raw, labels


def load_decomposition(path, dataset: RatingsDataset, fmt: str = "auto",
                       missing: str = "error",
                       strict_items: bool | None = None) -> Decomposition:
    """Load an item->labels file and turn the labels into item blocks.

    ``missing`` controls items that carry no label (hard error by default,
    or a synthetic catch-all block).  ``strict_items`` controls lines that
    reference item ids absent from the dataset: an error for the generic
    ``tsv`` format, skipped with a warning for the MovieLens formats (whose
    catalog files routinely list never-rated movies).
    """
    if fmt not in DECOMPOSITION_FORMATS:
        raise ValueError(f"unknown decomposition format {fmt!r}")
    if fmt == "auto":
        fmt = _sniff_decomposition_format(path)
    if strict_items is None:
        strict_items = fmt == "tsv"

    by_label: dict[str, list[int]] = {}
    order: list[str] = []
    skipped = 0
    for line_no, raw, labels in _iter_item_labels(path, fmt):
        if not dataset.has_item(raw):
            if strict_items:
                raise DataError(f"{path}:{line_no}: item id {raw} not present in the dataset")
            skipped += 1
            continue
        j = dataset.item_index(raw)
        for label in labels:
            if label not in by_label:
                by_label[label] = []
                order.append(label)
            by_label[label].append(j)
    if skipped:
        warnings.warn(f"skipped {skipped} decomposition line(s) for items "
                      "absent from the dataset")
    if not by_label:
        raise DataError(f"no usable item labels found in {path}")
    blocks = [by_label[label] for label in order]
    return decomposition_from_blocks(blocks, dataset.n_items,
                                     labels=order, missing=missing)


# ---------------------------------------------------------------------------
# preference vectors

def preference_vector(dataset: RatingsDataset, user: int) -> np.ndarray:
    """The user's ratings normalized to sum to one, dense over all items."""
    if not 0 <= user < dataset.n_users:
        raise IndexError(f"user index {user} out of range")
    row = dataset.R[[user], :].toarray().ravel()
    total = row.sum()
    if total <= 0:
        raise ModelAssumptionError(f"user {user} has no ratings")
    return row / total


def preference_matrix(dataset: RatingsDataset, users) -> sp.csr_array:
    """Sparse matrix whose rows are the preference vectors of ``users``.

    Users without any rating get a uniform row (with a warning); they carry
    no usable signal but would otherwise break the row-stochastic contract
    downstream.
    """
    users = np.asarray(users, dtype=np.intp)
    rows = dataset.R[users, :].tolil()
    out = sp.lil_array((len(users), dataset.n_items))
    uniform = []
    for i in range(len(users)):
        data = np.asarray(rows.data[i], dtype=np.float64)
        total = data.sum()
        if total <= 0:
            uniform.append(int(users[i]))
            out[i, :] = 1.0 / dataset.n_items
        else:
            out.rows[i] = list(rows.rows[i])
            out.data[i] = list(data / total)
    if uniform:
        warnings.warn(f"user(s) {uniform[:5]} have no ratings; "
                      "using uniform preference vectors")
    return out.tocsr()
