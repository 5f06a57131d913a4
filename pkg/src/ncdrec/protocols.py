"""Offline evaluation protocols.

Three experiment designs drive the metrics module:

* standard: hold out a random probe of ratings, turn its top-rated entries
  into test cases, and rank each held-out item against 1000 sampled unrated
  items of the same user.
* long-tail: the same, restricted to test items outside the short head of
  the popularity distribution.
* new-users: artificially sparsify the histories of a sample of heavy users
  and compare the resulting rankings against the ones induced by their full
  rating sets (rank correlations, degree of agreement, NDPM).

A fourth runner evaluates degree of agreement on externally provided
train/test splits (the classic five-fold benchmark layout).

All randomness flows from per-case generators derived from one master seed,
so runs are reproducible and order-independent.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .baselines import (SimilarityMatrix, TripartiteGraph, build_graph,
                        first_passage_batch, katz_similarity, laplacian_pinv,
                        mfa_similarity)
from .coldstart import ColdStartConfig
from .datasets import RatingsDataset, read_rating_triples
from .engine import EngineConfig
from .errors import DataError, ParameterError
from .metrics import (DoaTally, doa_user, kendall_tau, macro_doa, micro_doa,
                      ndpm, spearman_rho)
from .model import build_model
from .ranking import RankingList

BASELINE_METHODS = ("l-pinv", "mfa", "katz", "fp", "ct")
ALL_METHODS = ("ncdrec",) + BASELINE_METHODS


@dataclass(frozen=True)
class ProtocolConfig:
    """Shared knobs of the evaluation protocols."""

    probe_fraction: float = 0.014
    candidate_pool: int = 1000
    relevance_threshold: float = 5.0
    head_mass: float = 0.33
    new_user_count: int = 100
    min_ratings: int = 100
    keep_fractions: tuple = (0.04, 0.06, 0.08, 0.10)
    n_cutoff: int = 20
    halflives: tuple = (5.0, 10.0)
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.probe_fraction < 1.0:
            raise ParameterError(f"probe_fraction must be in (0, 1), got {self.probe_fraction}")
        if self.candidate_pool < 1:
            raise ParameterError(f"candidate_pool must be >= 1, got {self.candidate_pool}")
        if not 0.0 < self.head_mass < 1.0:
            raise ParameterError(f"head_mass must be in (0, 1), got {self.head_mass}")
        for frac in self.keep_fractions:
            if not 0.0 < frac <= 1.0:
                raise ParameterError(f"keep fraction {frac} outside (0, 1]")
        if any(h <= 1 for h in self.halflives):
            raise ParameterError("halflife parameters must be > 1")


def _case_rng(seed: int, *key) -> np.random.Generator:
    """Deterministic per-case generator; independent of evaluation order."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))


# ---------------------------------------------------------------------------
# probe/test construction

def split_probe(dataset: RatingsDataset, config: ProtocolConfig):
    """Remove a random probe of ratings from the dataset.

    Returns the training dataset (same index space, probe entries removed)
    and the probe triples as (users, items, values) arrays.
    """
    users, items, values = dataset.triples()
    n_probe = int(math.floor(config.probe_fraction * len(values)))
    if n_probe < 1:
        raise DataError("probe fraction selects no ratings")
    rng = _case_rng(config.seed, 0)
    picks = np.sort(rng.choice(len(values), size=n_probe, replace=False))
    mask = np.zeros(len(values), dtype=bool)
    mask[picks] = True
    train = dataset.subset(users[~mask], items[~mask], values[~mask])
    return train, (users[mask], items[mask], values[mask])


def test_cases_from_probe(probe, threshold: float) -> np.ndarray:
    """(user, item) pairs of probe entries at or above the relevance bar,
    sorted for determinism."""
    users, items, values = probe
    keep = values >= threshold
    cases = np.stack([users[keep], items[keep]], axis=1)
    order = np.lexsort((cases[:, 1], cases[:, 0]))
    return cases[order]


def sample_candidates(dataset: RatingsDataset, user: int, test_item: int,
                      pool: int, rng) -> tuple:
    """The test item plus up to ``pool`` unrated items of the same user.

    Unrated means unrated in the full dataset, so every distractor is an
    item the user never expressed an opinion on.  Returns (candidates,
    short_pool flag); the flag marks users with fewer than ``pool`` unrated
    items, for whom everything available is used.
    """
    rated = dataset.rated_items(user)
    unrated_mask = np.ones(dataset.n_items, dtype=bool)
    unrated_mask[rated] = False
    unrated_mask[test_item] = False
    unrated = np.flatnonzero(unrated_mask)
    short = unrated.size < pool
    if short:
        sampled = unrated
    else:
        sampled = rng.choice(unrated, size=pool, replace=False)
    return np.concatenate(([test_item], sampled)), short


# ---------------------------------------------------------------------------
# scorers

class ModelScorer:
    """Scores from a built recommender model."""

    name = "ncdrec"

    def __init__(self, model):
        self.model = model

    def scores(self, user: int, items) -> np.ndarray:
        return self.model.user_scores(user)[np.asarray(items, dtype=np.intp)]


class SimilarityScorer:
    """Scores from a dense node-similarity matrix; distance-like methods
    are negated so that higher is always better."""

    def __init__(self, sim: SimilarityMatrix, graph: TripartiteGraph):
        self.sim = sim
        self.graph = graph
        self.name = sim.method
        self._sign = -1.0 if sim.direction == "min-distance" else 1.0

    def scores(self, user: int, items) -> np.ndarray:
        row = self.sim.item_scores(self.graph, user)
        return self._sign * row[np.asarray(items, dtype=np.intp)]


class FirstPassageScorer:
    """Ranks items by expected hitting time of the random walk.

    ``ct=True`` adds the return leg (commute time).  First-passage columns
    are solved on demand and cached per target node, so repeated queries
    against the same items stay affordable.
    """

    def __init__(self, graph: TripartiteGraph, ct: bool = False,
                 tol: float = 1e-8):
        self.graph = graph
        self.ct = ct
        self.tol = tol
        self.name = "ct" if ct else "fp"
        self._fp_columns: dict[int, np.ndarray] = {}

    def _columns_for(self, targets: np.ndarray) -> np.ndarray:
        missing = [t for t in targets if t not in self._fp_columns]
        if missing:
            solved = first_passage_batch(self.graph, missing, tol=self.tol)
            for idx, t in enumerate(missing):
                self._fp_columns[t] = solved[:, idx]
        return np.stack([self._fp_columns[t] for t in targets], axis=1)

    def scores(self, user: int, items) -> np.ndarray:
        items = np.asarray(items, dtype=np.intp)
        u_node = self.graph.user_node(user)
        item_nodes = self.graph.item_nodes()[items]
        fp_to_items = self._columns_for(item_nodes)[u_node, :]
        if not self.ct:
            return -fp_to_items
        fp_to_user = self._columns_for(np.asarray([u_node]))[:, 0]
        return -(fp_to_items + fp_to_user[item_nodes])


class RatingScorer:
    """Scores items by their rating in a (possibly withheld) dataset;
    the perfect-knowledge ranker used for protocol sanity checks."""

    name = "oracle"

    def __init__(self, dataset: RatingsDataset):
        self.dataset = dataset

    def scores(self, user: int, items) -> np.ndarray:
        items = np.asarray(items, dtype=np.intp)
        return self.dataset.R[[user], :].toarray().ravel()[items]


class RandomScorer:
    """Uniform random scores, deterministic per (user, items) query."""

    name = "random"

    def __init__(self, seed: int = 0):
        self.seed = seed
        self._counter = 0

    def scores(self, user: int, items) -> np.ndarray:
        self._counter += 1
        rng = _case_rng(self.seed, 99, user, self._counter)
        return rng.random(len(np.asarray(items)))


def method_factories(decomposition, engine_config: EngineConfig,
                     coldstart_config: ColdStartConfig | None = None,
                     coldstart_max_ratings: int = 10,
                     methods=ALL_METHODS, weighting: str = "binary",
                     katz_attenuation: float | None = None,
                     fp_tol: float = 1e-8) -> dict:
    """Build scorer factories for the named methods.

    Each factory maps a training dataset (plus, optionally, the users forced
    through the cold-start lane) to a ready scorer.
    """
    factories = {}
    for name in methods:
        if name == "ncdrec":
            def make_ncdrec(train, new_users=None):
                model = build_model(train, decomposition, engine_config,
                                    coldstart_config, coldstart_max_ratings,
                                    extra_coldstart_users=new_users)
                return ModelScorer(model)
            factories[name] = make_ncdrec
        elif name in BASELINE_METHODS:
            def make_baseline(train, new_users=None, _name=name):
                graph = build_graph(train, decomposition, weighting=weighting)
                if _name == "l-pinv":
                    return SimilarityScorer(laplacian_pinv(graph), graph)
                if _name == "mfa":
                    return SimilarityScorer(mfa_similarity(graph), graph)
                if _name == "katz":
                    return SimilarityScorer(
                        katz_similarity(graph, katz_attenuation), graph)
                return FirstPassageScorer(graph, ct=_name == "ct", tol=fp_tol)
            factories[name] = make_baseline
        else:
            raise ParameterError(f"unknown method {name!r}; "
                                 f"expected one of {ALL_METHODS}")
    return factories


# ---------------------------------------------------------------------------
# standard and long-tail protocols

@dataclass(frozen=True)
class MethodRankingReport:
    """Hit-rank metrics of one method over a set of test cases."""

    method: str
    n_cases: int
    recall: np.ndarray
    precision: np.ndarray
    ndcg: np.ndarray
    r_scores: dict
    mrr: float

    def rows(self):
        out = []
        for i, n in enumerate(range(1, len(self.recall) + 1)):
            out.append((self.method, "recall", n, float(self.recall[i])))
        for i, n in enumerate(range(1, len(self.precision) + 1)):
            out.append((self.method, "precision", n, float(self.precision[i])))
        for i, n in enumerate(range(1, len(self.ndcg) + 1)):
            out.append((self.method, "ndcg", n, float(self.ndcg[i])))
        for halflife, value in sorted(self.r_scores.items()):
            out.append((self.method, "r-score", halflife, value))
        out.append((self.method, "mrr", "", self.mrr))
        return out


@dataclass(frozen=True)
class RankingProtocolReport:
    protocol: str
    config: dict
    n_cases: int
    short_pools: int
    methods: dict

    def rows(self):
        out = []
        for name in sorted(self.methods):
            out.extend(self.methods[name].rows())
        return out


def _curves_from_ranks(method: str, ranks: np.ndarray,
                       config: ProtocolConfig) -> MethodRankingReport:
    """Aggregate per-case hit ranks into the reported curves.

    Under the one-relevant-item design every metric is a function of the
    held-out item's rank alone; these closed forms are pinned against the
    general-purpose metric implementations in the test suite.
    """
    cutoffs = np.arange(1, config.n_cutoff + 1)
    hit = ranks[:, None] <= cutoffs[None, :]
    recall = hit.mean(axis=0)
    precision = recall / cutoffs
    # single relevant item: dcg = 1/log2(2 + rank), ideal = 1/log2(3)
    per_case_ndcg = np.log2(3.0) / np.log2(2.0 + ranks)
    ndcg = (hit * per_case_ndcg[:, None]).mean(axis=0)
    r_scores = {}
    for halflife in config.halflives:
        r_scores[halflife] = float(
            np.mean(np.exp2(-(ranks - 1.0) / (halflife - 1.0))))
    return MethodRankingReport(
        method=method,
        n_cases=len(ranks),
        recall=recall,
        precision=precision,
        ndcg=ndcg,
        r_scores=r_scores,
        mrr=float(np.mean(1.0 / ranks)),
    )


def _rank_cases(dataset: RatingsDataset, cases: np.ndarray,
                scorers: dict, config: ProtocolConfig):
    """Rank every test case's candidate list under every method."""
    ranks = {name: np.empty(len(cases), dtype=np.int64) for name in scorers}
    short_pools = 0
    for idx, (user, item) in enumerate(cases):
        rng = _case_rng(config.seed, 1, idx)
        candidates, short = sample_candidates(dataset, int(user), int(item),
                                              config.candidate_pool, rng)
        short_pools += int(short)
        for name, scorer in scorers.items():
            scores = scorer.scores(int(user), candidates)
            ranking = RankingList.from_scores(candidates, scores)
            ranks[name][idx] = ranking.rank_of(int(item))
    return ranks, short_pools


def protocol_standard(dataset: RatingsDataset, config: ProtocolConfig,
                      factories: dict, cases_filter=None,
                      protocol_name: str = "standard") -> RankingProtocolReport:
    """Probe-based top-N evaluation of every method in ``factories``."""
    train, probe = split_probe(dataset, config)
    cases = test_cases_from_probe(probe, config.relevance_threshold)
    if cases_filter is not None:
        cases = cases_filter(cases)
    if len(cases) == 0:
        raise DataError("no test cases survived the protocol filters")
    scorers = {name: make(train) for name, make in factories.items()}
    ranks, short_pools = _rank_cases(dataset, cases, scorers, config)
    methods = {name: _curves_from_ranks(name, ranks[name], config)
               for name in scorers}
    if short_pools:
        warnings.warn(f"{short_pools} test case(s) had fewer than "
                      f"{config.candidate_pool} unrated items available")
    return RankingProtocolReport(
        protocol=protocol_name,
        config=asdict(config),
        n_cases=len(cases),
        short_pools=short_pools,
        methods=methods,
    )


def head_items(dataset: RatingsDataset, head_mass: float) -> np.ndarray:
    """The most-popular items jointly holding ``head_mass`` of all ratings.

    Items are taken in order of decreasing rating count (ties by ascending
    index) until the cumulative count first reaches the mass threshold.
    """
    counts = np.diff(dataset.R.tocsc().indptr)
    order = np.lexsort((np.arange(dataset.n_items), -counts))
    cum = np.cumsum(counts[order])
    need = head_mass * dataset.n_ratings
    n_head = int(np.searchsorted(cum, need, side="left")) + 1
    return np.sort(order[:n_head])


def protocol_long_tail(dataset: RatingsDataset, config: ProtocolConfig,
                       factories: dict) -> RankingProtocolReport:
    """Standard protocol restricted to test items outside the short head."""
    head = set(head_items(dataset, config.head_mass).tolist())

    def drop_head(cases):
        keep = np.asarray([int(i) not in head for i in cases[:, 1]])
        tail_cases = cases[keep]
        if len(tail_cases) == 0:
            raise DataError("every test case fell in the short head; "
                            "no long-tail cases to evaluate")
        return tail_cases

    return protocol_standard(dataset, config, factories,
                             cases_filter=drop_head,
                             protocol_name="long-tail")


# ---------------------------------------------------------------------------
# new-user protocol

@dataclass(frozen=True)
class NewUserMetrics:
    method: str
    fraction: float
    kendall: float
    spearman: float
    macro_doa: float
    micro_doa: float
    ndpm: float
    n_users: int

    def rows(self):
        return [
            (self.method, "kendall-tau", self.fraction, self.kendall),
            (self.method, "spearman-rho", self.fraction, self.spearman),
            (self.method, "macro-doa", self.fraction, self.macro_doa),
            (self.method, "micro-doa", self.fraction, self.micro_doa),
            (self.method, "ndpm", self.fraction, self.ndpm),
        ]


@dataclass(frozen=True)
class NewUserReport:
    protocol: str
    config: dict
    users: np.ndarray
    results: dict  # fraction -> method -> NewUserMetrics

    def rows(self):
        out = []
        for fraction in sorted(self.results):
            for method in sorted(self.results[fraction]):
                out.extend(self.results[fraction][method].rows())
        return out


def select_new_users(dataset: RatingsDataset, config: ProtocolConfig) -> np.ndarray:
    """Sample the users whose histories get sparsified."""
    counts = dataset.user_rating_counts()
    qualifying = np.flatnonzero(counts >= config.min_ratings)
    if qualifying.size < config.new_user_count:
        raise DataError(
            f"need {config.new_user_count} users with >= {config.min_ratings} "
            f"ratings, found only {qualifying.size}"
        )
    rng = _case_rng(config.seed, 2)
    return np.sort(rng.choice(qualifying, size=config.new_user_count,
                              replace=False))


def sparsify_users(dataset: RatingsDataset, users: np.ndarray,
                   fraction: float, seed: int) -> RatingsDataset:
    """Keep only ``fraction`` of each selected user's ratings (at least one),
    leaving everyone else untouched."""
    u_all, i_all, v_all = dataset.triples()
    keep = np.ones(len(v_all), dtype=bool)
    for user in users:
        rows = np.flatnonzero(u_all == user)
        n_keep = max(1, int(fraction * rows.size + 0.5))
        rng = _case_rng(seed, 3, int(user))
        kept = rng.choice(rows, size=min(n_keep, rows.size), replace=False)
        mask = np.zeros(rows.size, dtype=bool)
        mask[np.searchsorted(rows, kept)] = True
        keep[rows[~mask]] = False
    return dataset.subset(u_all[keep], i_all[keep], v_all[keep])


def protocol_new_users(dataset: RatingsDataset, config: ProtocolConfig,
                       factories: dict) -> NewUserReport:
    """Sparsified-history evaluation against full-history reference rankings.

    For every keep fraction, the selected users' training histories shrink
    to that fraction; each method then ranks items from the sparsified data
    and is compared, per user, to the ranking induced by the user's complete
    rating set (rank correlations and NDPM over the items the user actually
    rated, degree of agreement over never-rated items).
    """
    users = select_new_users(dataset, config)
    results: dict = {}
    all_items = np.arange(dataset.n_items)
    for fraction in config.keep_fractions:
        train = sparsify_users(dataset, users, fraction, config.seed)
        results[fraction] = {}
        scorers = {name: make(train, users) for name, make in factories.items()}
        for name, scorer in scorers.items():
            taus, rhos, ndpms = [], [], []
            tallies: list[DoaTally | None] = []
            for user in users:
                user = int(user)
                full_items = dataset.rated_items(user)
                ref_scores = dataset.R[[user], :].toarray().ravel()[full_items]
                sys_scores = scorer.scores(user, full_items)
                taus.append(kendall_tau(ref_scores, sys_scores))
                rhos.append(spearman_rho(ref_scores, sys_scores))
                ndpms.append(ndpm(ref_scores, sys_scores))
                kept = train.rated_items(user)
                test_items = np.setdiff1d(full_items, kept)
                tally = doa_user(scorer.scores(user, all_items),
                                 test_items, kept)
                if tally is None:
                    warnings.warn(f"user {user} has no checkable pairs for "
                                  "degree of agreement; excluded")
                tallies.append(tally)
            results[fraction][name] = NewUserMetrics(
                method=name,
                fraction=fraction,
                kendall=float(np.nanmean(taus)),
                spearman=float(np.nanmean(rhos)),
                macro_doa=macro_doa(tallies),
                micro_doa=micro_doa(tallies),
                ndpm=float(np.nanmean(ndpms)),
                n_users=len(users),
            )
    return NewUserReport(
        protocol="new-users",
        config=asdict(config),
        users=users,
        results=results,
    )


# ---------------------------------------------------------------------------
# degree of agreement on predefined splits

@dataclass(frozen=True)
class SplitDoaReport:
    protocol: str
    config: dict
    splits: tuple
    results: dict  # method -> split name -> (macro, micro)

    def averages(self, method: str) -> tuple:
        macros = [self.results[method][s][0] for s in self.splits]
        micros = [self.results[method][s][1] for s in self.splits]
        return float(np.mean(macros)), float(np.mean(micros))

    def rows(self):
        out = []
        for method in sorted(self.results):
            for split in self.splits:
                macro, micro = self.results[method][split]
                out.append((method, "macro-doa", split, macro))
                out.append((method, "micro-doa", split, micro))
            macro, micro = self.averages(method)
            out.append((method, "macro-doa", "avg", macro))
            out.append((method, "micro-doa", "avg", micro))
        return out


def load_split(dataset: RatingsDataset, base_path, test_path, fmt: str):
    """Read one predefined train/test split into the dataset's index space."""
    def aligned(path):
        users, items, values = read_rating_triples(path, fmt)
        u = np.asarray([dataset.user_index(x) for x in users], dtype=np.intp)
        i = np.asarray([dataset.item_index(x) for x in items], dtype=np.intp)
        return u, i, values

    ub, ib, vb = aligned(base_path)
    train = dataset.subset(ub, ib, vb)
    test_u, test_i, _ = aligned(test_path)
    return train, (test_u, test_i)


def doa_on_split(train: RatingsDataset, test_pairs, scorer) -> list:
    """Per-user degree-of-agreement tallies for one split."""
    test_u, test_i = test_pairs
    all_items = np.arange(train.n_items)
    tallies = []
    for user in np.unique(test_u):
        user = int(user)
        test_items = test_i[test_u == user]
        tally = doa_user(scorer.scores(user, all_items),
                         test_items, train.rated_items(user))
        tallies.append(tally)
    return tallies


def protocol_doa_splits(dataset: RatingsDataset, splits: dict,
                        factories: dict, config=None) -> SplitDoaReport:
    """Evaluate degree of agreement over named predefined splits.

    ``splits`` maps a split name to a (train_dataset, (test_users,
    test_items)) pair, e.g. from :func:`load_split`.
    """
    results: dict = {name: {} for name in factories}
    for split_name in sorted(splits):
        train, test_pairs = splits[split_name]
        for method, make in factories.items():
            scorer = make(train)
            tallies = doa_on_split(train, test_pairs, scorer)
            results[method][split_name] = (macro_doa(tallies), micro_doa(tallies))
    return SplitDoaReport(
        protocol="doa-splits",
        config=dict(config) if config else {},
        splits=tuple(sorted(splits)),
        results=results,
    )


# ---------------------------------------------------------------------------
# report output

def write_report_csv(report, path) -> None:
    """One CSV row per method x metric x position, after comment lines
    echoing the resolved configuration."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        fh.write(f"# protocol={report.protocol}\n")
        for key in sorted(getattr(report, "config", {}) or {}):
            fh.write(f"# {key}={report.config[key]}\n")
        writer = csv.writer(fh)
        writer.writerow(["method", "metric", "n", "value"])
        for method, metric, n, value in report.rows():
            writer.writerow([method, metric, n, repr(float(value))])


def report_summary(report) -> dict:
    rows = [
        {"method": method, "metric": metric, "n": n, "value": value}
        for method, metric, n, value in report.rows()
    ]
    return {
        "protocol": report.protocol,
        "config": getattr(report, "config", {}),
        "rows": rows,
    }


def write_report_json(report, path) -> None:
    Path(path).write_text(json.dumps(report_summary(report), indent=2,
                                     default=str) + "\n", encoding="utf-8")
