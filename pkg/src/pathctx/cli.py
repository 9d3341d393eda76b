"""Command-line entry point: prepare, extract, train, evaluate, explain, sweep.

Every run is driven by one root seed; a resolved key=value config snapshot is
written (or printed) so any run can be reproduced exactly. Exit codes: 0
success, 2 configuration error, 3 data error, 4 runtime error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import multiprocessing
import os
import sys
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, PathctxError
from .evaluation import DEFAULT_SEEDS, ModelScorer, evaluate
from .explain import contributions, render_report
from .extraction import ExtractionConfig, enumerate_paths, extract_example
from .kg import KnowledgeGraph, Triple, augment_inverse, build_vocab, exclude_edge, load_triples
from .model import ABLATIONS, ModelConfig, PathContextModel
from .seeding import substream
from .training import DROPOUT_GRID, LR_GRID, TrainConfig, fit, grid_search

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4


@dataclass
class RunConfig:
    """Flat view of every tunable field; flags override config-file entries,
    which override these defaults."""

    d_model: int = 64
    d_ffn: int = 128
    heads: int = 4
    path_layers: int = 2
    context_layers: int = 2
    fusion_layers: int = 2
    max_path_len: int = 4
    path_cap: int = 300
    context_cap: int = 64
    dropout: float = 0.1
    ablation: str = "full"
    epochs: int = 50
    batch_size: int = 128
    lr: float = 1e-3
    patience: int = 5
    negatives_per_positive: int = 1
    validation_negatives: int = 50
    seed: int = 0

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            d_model=self.d_model,
            d_ffn=self.d_ffn,
            heads=self.heads,
            path_layers=self.path_layers,
            context_layers=self.context_layers,
            fusion_layers=self.fusion_layers,
            max_path_len=self.max_path_len,
            path_cap=self.path_cap,
            context_cap=self.context_cap,
            dropout=self.dropout,
            ablation=self.ablation,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr=self.lr,
            patience=self.patience,
            seed=self.seed,
            negatives_per_positive=self.negatives_per_positive,
            validation_negatives=self.validation_negatives,
        )


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def _parse_config_file(path: str) -> dict[str, str]:
    entries: dict[str, str] = {}
    try:
        with open(path, encoding="utf-8") as fh:
            for line_no, raw in enumerate(fh, start=1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{line_no}: expected key=value")
                key, value = (part.strip() for part in line.split("=", 1))
                entries[key] = value
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return entries


def _coerce(key: str, value: str):
    kind = _FIELD_TYPES.get(key)
    if kind is None:
        raise ConfigError(f"unknown config key {key!r}")
    try:
        if kind in ("int", int):
            return int(value)
        if kind in ("float", float):
            return float(value)
        return str(value)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {value!r}") from exc


def resolve_config(args) -> RunConfig:
    values: dict = {}
    if getattr(args, "config", None):
        for key, raw in _parse_config_file(args.config).items():
            values[key] = _coerce(key, raw)
    for key in _FIELD_TYPES:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    try:
        cfg = RunConfig(**values)
        cfg.model_config()  # surface invalid field combinations as config errors
        cfg.train_config()
        return cfg
    except ConfigError:
        raise
    except Exception as exc:
        raise ConfigError(str(exc)) from exc


def _parse_number_list(raw: str, kind, what: str) -> tuple:
    try:
        return tuple(kind(part) for part in raw.split(","))
    except ValueError as exc:
        raise ConfigError(f"bad {what} list {raw!r}") from exc


def write_snapshot(cfg: RunConfig, path, extras: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in sorted({**dataclasses.asdict(cfg), **(extras or {})}.items()):
            fh.write(f"{key}={value}\n")


def _load_dataset_dir(directory: str, split: str = "train") -> list[tuple[str, str, str]]:
    path = os.path.join(directory, f"{split}.txt")
    if not os.path.exists(path):
        raise DataError(f"missing {path}")
    return load_triples(path)


def _background_graph(directory: str, vocab=None) -> KnowledgeGraph:
    triples = _load_dataset_dir(directory, "train")
    if not triples:
        raise DataError(f"{directory}/train.txt is empty")
    resolved = build_vocab({t[1] for t in triples}, reuse=vocab)
    return augment_inverse(triples, resolved)


def _facts_from_split(graph: KnowledgeGraph, directory: str, split: str) -> list[Triple]:
    return [graph.triple_from_names(*t) for t in _load_dataset_dir(directory, split)]


# ---------------------------------------------------------------------------
# prepare
# ---------------------------------------------------------------------------


def cmd_prepare(args) -> int:
    cfg = resolve_config(args)
    graph = _background_graph(args.data)
    print(f"entities={graph.n_entities}")
    print(f"base_relations={graph.vocab.base_count}")
    print(f"facts={graph.source_fact_count}")
    print(f"edges_augmented={graph.n_edges}")
    for split in ("valid", "test"):
        path = os.path.join(args.data, f"{split}.txt")
        if os.path.exists(path):
            print(f"{split}_facts={len(load_triples(path))}")

    facts = _facts_from_split(graph, args.data, "train")
    rng = substream(cfg.seed, "prepare")
    sample_size = min(args.sample, len(facts))
    chosen = rng.choice(len(facts), size=sample_size, replace=False) if sample_size else []
    counts = []
    for idx in chosen:
        fact = facts[int(idx)]
        view = exclude_edge(graph, fact)
        counts.append(len(enumerate_paths(view, fact.head, fact.tail, cfg.max_path_len)))
    buckets = ((0, 0), (1, 1), (2, 5), (6, 20), (21, 100), (101, 300), (301, 10**9))
    print(f"path_histogram sample={sample_size} max_len={cfg.max_path_len}")
    for low, high in buckets:
        n = sum(1 for c in counts if low <= c <= high)
        label = f"{low}" if low == high else (f"{low}-{high}" if high < 10**9 else f">{low - 1}")
        print(f"  paths[{label}]={n}")
    print("config " + " ".join(f"{k}={v}" for k, v in sorted(dataclasses.asdict(cfg).items())))
    return EXIT_OK


# ---------------------------------------------------------------------------
# extract
# ---------------------------------------------------------------------------

_WORKER: dict = {}


def _init_worker(graph, extraction, seed):
    _WORKER["graph"] = graph
    _WORKER["extraction"] = extraction
    _WORKER["seed"] = seed


def _extract_record(fact: Triple) -> str:
    graph: KnowledgeGraph = _WORKER["graph"]
    extraction: ExtractionConfig = _WORKER["extraction"]
    rng = substream(_WORKER["seed"], f"extract:{fact.head}:{fact.relation}:{fact.tail}")
    example = extract_example(graph, fact, extraction, rng)
    name_of = graph.vocab.name_of
    head, relation, tail = graph.triple_names(fact)
    record = {
        "head": head,
        "relation": relation,
        "tail": tail,
        "head_context": [name_of(r) for r in example.head_context.relations],
        "tail_context": [name_of(r) for r in example.tail_context.relations],
        "paths": [[name_of(r) for r in path] for path in example.paths.paths],
        "paths_truncated": example.paths.truncated,
    }
    return json.dumps(record)


def cmd_extract(args) -> int:
    cfg = resolve_config(args)
    graph = _background_graph(args.data)
    facts = _facts_from_split(graph, args.data, args.split)
    extraction = ExtractionConfig(cfg.max_path_len, cfg.path_cap, cfg.context_cap)

    _init_worker(graph, extraction, cfg.seed)
    if args.workers > 1:
        ctx = multiprocessing.get_context("fork")
        with ctx.Pool(args.workers, initializer=_init_worker, initargs=(graph, extraction, cfg.seed)) as pool:
            lines = pool.map(_extract_record, facts, chunksize=64)
    else:
        lines = [_extract_record(fact) for fact in facts]

    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + ("\n" if lines else ""))
        write_snapshot(cfg, args.out + ".config", {"data": args.data, "split": args.split})
        print(f"wrote {len(lines)} records to {args.out}")
    else:
        for line in lines:
            print(line)
    return EXIT_OK


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    os.makedirs(args.out, exist_ok=True)
    graph = _background_graph(args.data)
    train_facts = _facts_from_split(graph, args.data, "train")
    valid_path = os.path.join(args.data, "valid.txt")
    valid_facts = _facts_from_split(graph, args.data, "valid") if os.path.exists(valid_path) else []

    model = PathContextModel(cfg.model_config(), graph.vocab, seed=cfg.seed)
    checkpoint = os.path.join(args.out, "model.ckpt")
    report = fit(
        graph,
        train_facts,
        valid_facts,
        model,
        cfg.train_config(),
        checkpoint_path=checkpoint,
        log_path=os.path.join(args.out, "train_log.jsonl"),
    )
    write_snapshot(cfg, os.path.join(args.out, "config.resolved"), {"data": args.data, "command": "train"})
    print(f"epochs_run={len(report.epoch_losses)}")
    print(f"best_epoch={report.best_epoch}")
    print(f"best_val_hits10={report.best_metric:.6f}")
    print(f"checkpoint={checkpoint}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------


class _OracleStub:
    """Scores the true candidate 1 and negatives 0; harness self-test."""

    def score_candidates(self, graph, fact, negatives, rng):
        return 1.0, np.zeros(len(negatives))


class _ConstantStub:
    """Scores every candidate 0.5; exercises the tie policy end to end."""

    def score_candidates(self, graph, fact, negatives, rng):
        return 0.5, np.full(len(negatives), 0.5)


def cmd_evaluate(args) -> int:
    cfg = resolve_config(args)
    seeds = _parse_number_list(args.seeds, int, "seed") if args.seeds else DEFAULT_SEEDS
    if args.stub_scorer:
        scorer = _OracleStub() if args.stub_scorer == "oracle" else _ConstantStub()
        graph = _background_graph(args.data)
    else:
        if not args.checkpoint:
            raise ConfigError("evaluate needs --checkpoint or --stub-scorer")
        model = PathContextModel.load(args.checkpoint)
        graph = _background_graph(args.data, vocab=model.vocab)
        scorer = ModelScorer(model)
    test_facts = _facts_from_split(graph, args.data, "test")
    report = evaluate(
        scorer, graph, test_facts, seeds=seeds, negatives=args.negatives, workers=args.workers
    )

    for metrics in report.per_seed:
        print(
            f"seed={metrics.seed} mrr={metrics.mrr:.6f} hits10={metrics.hits10:.6f} "
            f"queries={metrics.n_queries}"
        )
    print(
        f"aggregate mrr={report.mean_mrr:.6f}+/-{report.std_mrr:.6f} "
        f"hits10={report.mean_hits10:.6f}+/-{report.std_hits10:.6f}"
    )
    shortfall = sum(r.shortfall for results in report.rankings.values() for r in results)
    if shortfall:
        print(f"shortfall_queries={shortfall}")

    if args.out:
        os.makedirs(args.out, exist_ok=True)
        payload = {
            "per_seed": [dataclasses.asdict(m) for m in report.per_seed],
            "mean_mrr": report.mean_mrr,
            "std_mrr": report.std_mrr,
            "mean_hits10": report.mean_hits10,
            "std_hits10": report.std_hits10,
            "seeds": list(seeds),
        }
        with open(os.path.join(args.out, "metrics.json"), "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
        write_snapshot(
            cfg,
            os.path.join(args.out, "config.resolved"),
            {"data": args.data, "command": "evaluate", "seeds": args.seeds or ",".join(map(str, DEFAULT_SEEDS))},
        )
    if args.dump_ranks:
        with open(args.dump_ranks, "w", encoding="utf-8") as fh:
            for seed, results in report.rankings.items():
                for r in results:
                    head, relation, tail = graph.triple_names(r.query)
                    fh.write(
                        json.dumps(
                            {
                                "seed": seed,
                                "head": head,
                                "relation": relation,
                                "tail": tail,
                                "rank": r.rank,
                                "true_score": r.true_score,
                                "n_negatives": len(r.negative_scores),
                                "shortfall": r.shortfall,
                            }
                        )
                        + "\n"
                    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# explain
# ---------------------------------------------------------------------------


def cmd_explain(args) -> int:
    cfg = resolve_config(args)
    model = PathContextModel.load(args.checkpoint)
    model.require_full_mode()
    graph = _background_graph(args.data, vocab=model.vocab)
    query = graph.triple_from_names(args.head, args.relation, args.tail)
    rng = substream(cfg.seed, f"explain:{query.head}:{query.relation}:{query.tail}")
    example = extract_example(graph, query, model.config.extraction(), rng)
    report = contributions(model, example, query=query)
    if args.json:
        payload = {
            "head": args.head,
            "relation": args.relation,
            "tail": args.tail,
            "score": report.score,
            "entries": [
                {
                    "kind": e.kind,
                    "relations": [graph.vocab.name_of(r) for r in e.relations],
                    "contribution": e.contribution,
                }
                for e in report.entries
            ],
        }
        print(json.dumps(payload))
    else:
        print(render_report(report, graph.vocab, entity_names=graph.entity_names, top_k=args.top))
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------


def cmd_sweep(args) -> int:
    cfg = resolve_config(args)
    os.makedirs(args.out, exist_ok=True)
    graph = _background_graph(args.data)
    train_facts = _facts_from_split(graph, args.data, "train")
    valid_facts = _facts_from_split(graph, args.data, "valid")

    lr_grid = _parse_number_list(args.lrs, float, "learning-rate") if args.lrs else LR_GRID
    dropout_grid = _parse_number_list(args.dropouts, float, "dropout") if args.dropouts else DROPOUT_GRID
    result = grid_search(
        graph, train_facts, valid_facts, cfg.model_config(), cfg.train_config(), lr_grid, dropout_grid
    )

    table_path = os.path.join(args.out, "sweep.jsonl")
    with open(table_path, "w", encoding="utf-8") as fh:
        for cell in result.cells:
            best = cell.lr == result.best_lr and cell.dropout == result.best_dropout
            row = {
                "lr": cell.lr,
                "dropout": cell.dropout,
                "val_hits10": cell.val_metric,
                "best_epoch": cell.best_epoch,
                "epochs_run": cell.epochs_run,
                "selected": best,
            }
            fh.write(json.dumps(row) + "\n")
            marker = " *" if best else ""
            print(
                f"lr={cell.lr} dropout={cell.dropout} val_hits10={cell.val_metric:.6f} "
                f"best_epoch={cell.best_epoch}{marker}"
            )
    checkpoint = os.path.join(args.out, "model.ckpt")
    result.best_model.save(checkpoint)
    write_snapshot(
        cfg,
        os.path.join(args.out, "config.resolved"),
        {
            "data": args.data,
            "command": "sweep",
            "selected_lr": result.best_lr,
            "selected_dropout": result.best_dropout,
        },
    )
    print(f"selected lr={result.best_lr} dropout={result.best_dropout}")
    print(f"checkpoint={checkpoint}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser / entry point
# ---------------------------------------------------------------------------


def _add_model_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--max-path-len", dest="max_path_len", type=int)
    parser.add_argument("--path-cap", dest="path_cap", type=int)
    parser.add_argument("--context-cap", dest="context_cap", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pathctx",
        description="Inductive knowledge-graph fact scoring from relational paths and context.",
    )
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="dataset statistics and vocabulary summary")
    p.add_argument("data", help="dataset directory (train/valid/test .txt)")
    p.add_argument("--sample", type=int, default=50, help="facts sampled for the path histogram")
    p.add_argument("--seed", type=int)
    _add_model_flags(p)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("extract", help="dump model inputs as JSON lines")
    p.add_argument("data")
    p.add_argument("--split", choices=("train", "valid", "test"), default="train")
    p.add_argument("--out", help="output file (default stdout)")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int)
    _add_model_flags(p)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="train a scorer on a dataset directory")
    p.add_argument("data")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--lr", type=float)
    p.add_argument("--dropout", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--ablation", choices=ABLATIONS)
    _add_model_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="rank test facts against sampled negatives")
    p.add_argument("data", help="inference dataset directory")
    p.add_argument("--checkpoint")
    p.add_argument("--stub-scorer", dest="stub_scorer", choices=("oracle", "constant"))
    p.add_argument("--seeds", help="comma-separated evaluation seeds")
    p.add_argument("--negatives", type=int, default=50)
    p.add_argument("--out", help="directory for metrics.json + config snapshot")
    p.add_argument("--dump-ranks", dest="dump_ranks", help="per-query rank dump (JSONL)")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("explain", help="contribution scores for one query fact")
    p.add_argument("data", help="background dataset directory")
    p.add_argument("head")
    p.add_argument("relation")
    p.add_argument("tail")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--top", type=int, default=3)
    p.add_argument("--json", action="store_true")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("sweep", help="grid search over learning rate and dropout")
    p.add_argument("data")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--lrs", help="comma-separated learning rates (default: the full grid)")
    p.add_argument("--dropouts", help="comma-separated dropout rates (default: the full grid)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--seed", type=int)
    _add_model_flags(p)
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except PathctxError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
