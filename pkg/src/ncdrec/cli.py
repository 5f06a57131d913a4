"""Command-line front end.

Subcommands: ``ingest`` (load + validate data), ``coverage`` (block
coupling connectivity report), ``build`` (persist a model), ``recommend``
(top-N for one user), ``evaluate`` (run a protocol over selected methods).

All options can come from a flat ``key = value`` config file via
``--config``; explicit flags override file entries.  Exit codes: 0 success,
1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .baselines import MAX_DENSE_NODES
from .coldstart import ColdStartConfig, verify_coverage
from .datasets import load_decomposition, load_ratings
from .engine import BuildTimer, EngineConfig
from .errors import (ConvergenceError, DataError, DisconnectedGraphError,
                     NcdrecError, ParameterError, SizeGuardError)
from .model import build_model, load_model, save_model
from .protocols import (ALL_METHODS, ProtocolConfig, load_split,
                        method_factories, protocol_doa_splits,
                        protocol_long_tail, protocol_new_users,
                        protocol_standard, write_report_csv,
                        write_report_json)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of exiting, so we control exit codes."""

    def error(self, message):
        raise UsageError(message)


@dataclass
class RunConfig:
    """Resolved settings for one invocation."""

    dataset: str | None = None
    format: str = "movielens-100k"
    decomposition: str | None = None
    decomposition_format: str = "auto"
    missing_labels: str = "error"
    weighting: str = "binary"
    # engine
    epsilon: float = 0.01
    f: int = 10
    M: int | None = None
    tol: float = 1e-6
    max_restarts: int = 200
    seed: int = 0
    # cold start
    alpha: float = 0.01
    beta: float = 0.75
    coldstart_tol: float = 1e-8
    coldstart_maxit: int = 200
    coldstart_max_ratings: int = 10
    # protocols
    protocol: str = "standard"
    methods: tuple = ("ncdrec",)
    probe_fraction: float = 0.014
    candidate_pool: int = 1000
    relevance_threshold: float = 5.0
    head_mass: float = 0.33
    new_user_count: int = 100
    min_ratings: int = 100
    keep_fractions: tuple = (0.04, 0.06, 0.08, 0.10)
    katz_attenuation: float | None = None
    splits_dir: str | None = None
    n_splits: int = 5
    # run control
    out: str = "out"
    threads: int | None = None

    def engine_config(self) -> EngineConfig:
        return EngineConfig(epsilon=self.epsilon, f=self.f, M=self.M,
                            tol=self.tol, max_restarts=self.max_restarts,
                            seed=self.seed)

    def coldstart_config(self) -> ColdStartConfig:
        return ColdStartConfig(alpha=self.alpha, beta=self.beta,
                               tol=self.coldstart_tol,
                               maxit=self.coldstart_maxit)

    def protocol_config(self) -> ProtocolConfig:
        return ProtocolConfig(
            probe_fraction=self.probe_fraction,
            candidate_pool=self.candidate_pool,
            relevance_threshold=self.relevance_threshold,
            head_mass=self.head_mass,
            new_user_count=self.new_user_count,
            min_ratings=self.min_ratings,
            keep_fractions=tuple(self.keep_fractions),
            seed=self.seed,
        )

    def echo(self) -> dict:
        out = {}
        for key, value in self.__dict__.items():
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            out[key] = value
        return out


_FIELD_TYPES = {
    "f": int, "M": int, "max_restarts": int, "seed": int,
    "coldstart_maxit": int, "coldstart_max_ratings": int,
    "candidate_pool": int, "new_user_count": int, "min_ratings": int,
    "n_splits": int, "threads": int,
    "epsilon": float, "tol": float, "alpha": float, "beta": float,
    "coldstart_tol": float, "probe_fraction": float,
    "relevance_threshold": float, "head_mass": float,
    "katz_attenuation": float,
}


def _coerce(key: str, raw: str):
    if key in ("methods",):
        return tuple(s.strip() for s in raw.split(",") if s.strip())
    if key == "keep_fractions":
        return tuple(float(s) for s in raw.split(",") if s.strip())
    if key in _FIELD_TYPES:
        return _FIELD_TYPES[key](raw)
    return raw


def read_config_file(path) -> dict:
    """Parse a flat ``key = value`` file ('#' starts a comment)."""
    values = {}
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{line_no}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in RunConfig.__dataclass_fields__:
            raise UsageError(f"{path}:{line_no}: unknown config key {key!r}")
        values[key] = _coerce(key, raw)
    return values


def resolve_config(args) -> RunConfig:
    values = {}
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    for key in RunConfig.__dataclass_fields__:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = _coerce(key, flag) if isinstance(flag, str) else flag
    return RunConfig(**values)


def _add_common_flags(p):
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--dataset", help="path to the rating file")
    p.add_argument("--format", choices=("movielens-100k", "movielens-1m", "yahoo-r2"))
    p.add_argument("--decomposition", help="path to the item-label file")
    p.add_argument("--decomposition-format", dest="decomposition_format",
                   choices=("auto", "movielens-100k", "movielens-1m", "tsv"))
    p.add_argument("--missing-labels", dest="missing_labels",
                   choices=("error", "catch-all"))
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--out")


def _add_model_flags(p):
    p.add_argument("--epsilon", type=float)
    p.add_argument("-f", "--f", dest="f", type=int)
    p.add_argument("-M", "--steps", dest="M", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--max-restarts", dest="max_restarts", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--coldstart-tol", dest="coldstart_tol", type=float)
    p.add_argument("--coldstart-maxit", dest="coldstart_maxit", type=int)
    p.add_argument("--coldstart-max-ratings", dest="coldstart_max_ratings", type=int)


def build_parser() -> _Parser:
    parser = _Parser(prog="ncdrec", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="load and validate a dataset")
    _add_common_flags(p)

    p = sub.add_parser("coverage", help="report block coupling connectivity")
    _add_common_flags(p)

    p = sub.add_parser("build", help="build and persist a model")
    _add_common_flags(p)
    _add_model_flags(p)

    p = sub.add_parser("recommend", help="top-N items for one user")
    p.add_argument("--model", required=True, help="model directory from 'build'")
    p.add_argument("--user", required=True, type=int, help="raw user id")
    p.add_argument("-n", "--top", dest="top", type=int, default=10)
    p.add_argument("--output", choices=("text", "json"), default="text")

    p = sub.add_parser("evaluate", help="run an evaluation protocol")
    _add_common_flags(p)
    _add_model_flags(p)
    p.add_argument("--protocol", choices=("standard", "long-tail", "new-users",
                                          "doa-splits"))
    p.add_argument("--methods", help="comma-separated subset of: " + ",".join(ALL_METHODS))
    p.add_argument("--probe-fraction", dest="probe_fraction", type=float)
    p.add_argument("--candidate-pool", dest="candidate_pool", type=int)
    p.add_argument("--relevance-threshold", dest="relevance_threshold", type=float)
    p.add_argument("--head-mass", dest="head_mass", type=float)
    p.add_argument("--new-user-count", dest="new_user_count", type=int)
    p.add_argument("--min-ratings", dest="min_ratings", type=int)
    p.add_argument("--keep-fractions", dest="keep_fractions")
    p.add_argument("--katz-attenuation", dest="katz_attenuation", type=float)
    p.add_argument("--splits-dir", dest="splits_dir",
                   help="directory with u{i}.base/u{i}.test files")
    p.add_argument("--n-splits", dest="n_splits", type=int)
    return parser


def _load_inputs(config: RunConfig):
    if not config.dataset:
        raise UsageError("--dataset is required")
    dataset = load_ratings(config.dataset, config.format)
    decomposition = None
    if config.decomposition:
        decomposition = load_decomposition(
            config.decomposition, dataset, fmt=config.decomposition_format,
            missing=config.missing_labels,
        )
    return dataset, decomposition


def cmd_ingest(config: RunConfig) -> int:
    dataset, decomposition = _load_inputs(config)
    summary = {
        "dataset": config.dataset,
        "format": config.format,
        "n_users": dataset.n_users,
        "n_items": dataset.n_items,
        "n_ratings": dataset.n_ratings,
    }
    if decomposition is not None:
        summary["n_blocks"] = decomposition.n_blocks
        report = verify_coverage(decomposition)
        summary["coupling_graph_connected"] = report.connected
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def cmd_coverage(config: RunConfig) -> int:
    dataset, decomposition = _load_inputs(config)
    if decomposition is None:
        raise UsageError("--decomposition is required for the coverage report")
    report = verify_coverage(decomposition)
    print(f"blocks: {report.n_blocks}")
    print(f"coupling graph connected: {report.connected}")
    if report.connected:
        print("full item-space coverage is guaranteed for every preference vector")
    else:
        print(f"coverage NOT guaranteed; {len(report.components)} block components:")
        for comp in report.components:
            print(f"  {list(comp)}")
    if config.out:
        out = Path(config.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "coverage.json").write_text(json.dumps({
            "connected": report.connected,
            "n_blocks": report.n_blocks,
            "components": [list(c) for c in report.components],
        }, indent=2) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_build(config: RunConfig) -> int:
    dataset, decomposition = _load_inputs(config)
    if decomposition is None:
        raise UsageError("--decomposition is required to build a model")
    timer = BuildTimer()
    t0 = time.perf_counter()
    model = build_model(
        dataset, decomposition, config.engine_config(),
        config.coldstart_config(), config.coldstart_max_ratings,
        keep_matrices=True, timer=timer,
    )
    total = time.perf_counter() - t0
    if not model.coverage.connected:
        print("warning: block coupling graph is disconnected; "
              "cold-start coverage is not guaranteed", file=sys.stderr)
    out = Path(config.out)
    save_model(model, out)
    (out / "config.txt").write_text(
        "".join(f"{k} = {v}\n" for k, v in sorted(config.echo().items())),
        encoding="utf-8")
    log_lines = timer.lines() + [f"total: {total:.3f}s"]
    (out / "build.log").write_text("\n".join(log_lines) + "\n", encoding="utf-8")
    print(f"model written to {out} "
          f"({model.svd.f} triplets, {model.coldstart_users.size} cold-start users)")
    return EXIT_OK


def cmd_recommend(args) -> int:
    model = load_model(args.model)
    if args.top < 1:
        raise UsageError(f"-n must be >= 1, got {args.top}")
    user = model.dataset.user_index(args.user)
    ranking = model.recommend(user, args.top)
    raw_items = model.dataset.item_ids[ranking.items]
    if args.output == "json":
        print(json.dumps({
            "user": args.user,
            "items": [int(i) for i in raw_items],
            "scores": [float(s) for s in ranking.scores],
        }, indent=2))
    else:
        for raw, score in zip(raw_items, ranking.scores):
            print(f"{raw}\t{score:.6f}")
    return EXIT_OK


def cmd_evaluate(config: RunConfig) -> int:
    if not config.methods:
        raise UsageError("at least one method is required")
    for name in config.methods:
        if name not in ALL_METHODS:
            raise UsageError(f"unknown method {name!r}; expected subset of "
                             + ",".join(ALL_METHODS))
    dataset, decomposition = _load_inputs(config)
    if decomposition is None:
        raise UsageError("--decomposition is required to evaluate")
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)

    factories = method_factories(
        decomposition, config.engine_config(), config.coldstart_config(),
        config.coldstart_max_ratings, methods=config.methods,
        weighting=config.weighting, katz_attenuation=config.katz_attenuation,
    )
    # the dense baselines invert an (n+m+K)-dimensional matrix; skip them
    # (with the reason on record) rather than fail the whole run
    skipped = {}
    usable = dict(factories)
    n_nodes = dataset.n_users + dataset.n_items + decomposition.n_blocks
    if n_nodes > MAX_DENSE_NODES:
        for name in list(usable):
            if name != "ncdrec":
                skipped[name] = (f"graph has {n_nodes} nodes, beyond the "
                                 f"{MAX_DENSE_NODES}-node dense size guard")
                del usable[name]
    if not usable:
        raise DataError("every requested method was skipped: "
                        + "; ".join(f"{k}: {v}" for k, v in skipped.items()))

    pconf = config.protocol_config()
    if config.protocol == "standard":
        report = protocol_standard(dataset, pconf, usable)
    elif config.protocol == "long-tail":
        report = protocol_long_tail(dataset, pconf, usable)
    elif config.protocol == "new-users":
        report = protocol_new_users(dataset, pconf, usable)
    elif config.protocol == "doa-splits":
        if not config.splits_dir:
            raise UsageError("--splits-dir is required for doa-splits")
        splits = {}
        for i in range(1, config.n_splits + 1):
            base = Path(config.splits_dir) / f"u{i}.base"
            test = Path(config.splits_dir) / f"u{i}.test"
            if not base.exists() or not test.exists():
                raise DataError(f"missing split files {base} / {test}")
            splits[f"u{i}"] = load_split(dataset, base, test, config.format)
        report = protocol_doa_splits(dataset, splits, usable,
                                     config=config.echo())
    else:
        raise UsageError(f"unknown protocol {config.protocol!r}")

    csv_path = out / f"{config.protocol}.csv"
    write_report_csv(report, csv_path)
    summary_path = out / f"{config.protocol}.json"
    write_report_json(report, summary_path)
    if skipped:
        (out / "skipped.json").write_text(json.dumps(skipped, indent=2) + "\n",
                                          encoding="utf-8")
    print(f"wrote {csv_path} and {summary_path}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "threads", None):
            os.environ.setdefault("OMP_NUM_THREADS", str(args.threads))
        if args.command == "recommend":
            return cmd_recommend(args)
        config = resolve_config(args)
        if args.command == "ingest":
            return cmd_ingest(config)
        if args.command == "coverage":
            return cmd_coverage(config)
        if args.command == "build":
            return cmd_build(config)
        if args.command == "evaluate":
            return cmd_evaluate(config)
        raise UsageError(f"unknown command {args.command!r}")
    except (UsageError, ParameterError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ConvergenceError, DisconnectedGraphError, SizeGuardError,
            np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except NcdrecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
