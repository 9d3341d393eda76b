"""Training loop: per-epoch negative sampling, summed binary cross-entropy,
Adam, early stopping on validation Hits@10, and grid search over learning
rate and dropout."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .errors import ContractError, SamplingError
from .evaluation import hits_credit, rank, sample_eval_negatives
from .extraction import ModelInput, enumerate_paths, extract_context, extract_example, sample_paths
from .kg import KnowledgeGraph, Triple, exclude_edge
from .model import ModelConfig, PathContextModel
from .seeding import substream

logger = logging.getLogger(__name__)

LR_GRID = (5e-5, 1e-4, 5e-4, 1e-3, 5e-3)
DROPOUT_GRID = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6)


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 128
    lr: float = 1e-3
    patience: int = 5
    seed: int = 0
    negatives_per_positive: int = 1
    validation_negatives: int = 50

    def __post_init__(self):
        if self.patience < 1:
            raise ContractError("patience must be >= 1")
        if self.epochs < 1 or self.batch_size < 1 or self.negatives_per_positive < 1:
            raise ContractError("epochs, batch_size and negatives_per_positive must be >= 1")


@dataclass(frozen=True)
class LabeledFact:
    triple: Triple
    label: int


@dataclass
class TrainReport:
    epoch_losses: list[float] = field(default_factory=list)
    val_metrics: list[float] = field(default_factory=list)
    best_epoch: int = 0
    best_metric: float = float("-inf")
    best_checkpoint_path: str | None = None


def sample_negative(fact: Triple, graph: KnowledgeGraph, rng: np.random.Generator) -> Triple:
    """Corrupt the head or tail with a uniform random entity, rejecting members
    of the known fact set; after 100 failed draws the other side is tried."""
    n = graph.n_entities
    if n < 2:
        raise SamplingError("need at least 2 entities to sample a negative")
    first = int(rng.integers(2))
    for side in (first, 1 - first):
        for _ in range(100):
            entity = int(rng.integers(n))
            if side == 0:
                candidate = Triple(entity, fact.relation, fact.tail)
            else:
                candidate = Triple(fact.head, fact.relation, entity)
            if candidate != fact and not graph.contains(candidate):
                return candidate
    raise SamplingError(f"no valid corruption found for {fact}")


def bce_loss(scores: ad.Tensor, labels) -> ad.Tensor:
    """Summed binary cross-entropy; scores are clamped to [1e-7, 1 - 1e-7]."""
    y = np.asarray(labels, dtype=scores.data.dtype)
    if y.shape != scores.data.shape:
        raise ContractError(f"scores/labels length mismatch: {scores.data.shape} vs {y.shape}")
    s = ad.clip(scores, 1e-7, 1.0 - 1e-7)
    return -ad.sum_(y * ad.log(s) + (1.0 - y) * ad.log(1.0 - s))


class _EvidenceCache:
    """Memoized leakage-guarded evidence per query; paths are kept unsampled so
    the per-epoch cap sampling stays fresh while enumeration runs once."""

    def __init__(self, graph: KnowledgeGraph, config, seed: int):
        self.graph = graph
        self.config = config
        self.seed = seed
        self._store: dict[Triple, tuple] = {}

    def evidence(self, fact: Triple):
        hit = self._store.get(fact)
        if hit is None:
            view = exclude_edge(self.graph, fact)
            paths = enumerate_paths(view, fact.head, fact.tail, self.config.max_path_len)
            ctx_rng = substream(self.seed, f"context:{fact.head}:{fact.relation}:{fact.tail}")
            hit = (
                paths,
                extract_context(view, fact.head, self.config.context_cap, ctx_rng),
                extract_context(view, fact.tail, self.config.context_cap, ctx_rng),
            )
            self._store[fact] = hit
        return hit

    def model_input(self, fact: Triple, path_rng: np.random.Generator) -> ModelInput:
        paths, head_ctx, tail_ctx = self.evidence(fact)
        return ModelInput(fact.relation, head_ctx, tail_ctx, sample_paths(paths, self.config.path_cap, path_rng))


def _frozen_validation_inputs(graph, valid_facts, config, extraction, seed):
    """Candidate ModelInputs per validation fact, with one fixed negative set
    sampled at the start and reused for every epoch."""
    known = frozenset(valid_facts)
    groups = []
    for fact in valid_facts:
        tag = f"{fact.head}:{fact.relation}:{fact.tail}"
        neg_rng = substream(seed, f"valid_negatives:{tag}")
        negs = sample_eval_negatives(fact, graph, config.validation_negatives, neg_rng, extra_known=known)
        extract_rng = substream(seed, f"valid_extract:{tag}")
        groups.append([extract_example(graph, c, extraction, extract_rng) for c in (fact, *negs)])
    return groups


def fit(
    train_graph: KnowledgeGraph,
    train_facts,
    valid_facts,
    model: PathContextModel,
    config: TrainConfig,
    checkpoint_path=None,
    log_path=None,
) -> TrainReport:
    """Train with one fresh negative per positive per epoch, batches of
    ``batch_size`` labeled facts, and early stopping on validation Hits@10
    under the fixed 50-negative protocol. The model ends at its best epoch.
    """
    train_facts = list(train_facts)
    if not train_facts:
        raise ContractError("fit needs a nonempty training set")
    valid_facts = list(valid_facts)
    extraction = model.config.extraction()

    rng_shuffle = substream(config.seed, "shuffle")
    rng_negatives = substream(config.seed, "negatives")
    rng_dropout = substream(config.seed, "dropout")
    rng_paths = substream(config.seed, "path_sample")

    cache = _EvidenceCache(train_graph, extraction, config.seed)
    val_groups = _frozen_validation_inputs(train_graph, valid_facts, config, extraction, config.seed)
    flat_val = [inp for group in val_groups for inp in group]

    params = model.parameters()
    optimizer = ad.AdamState(lr=config.lr)
    report = TrainReport()
    best_state: dict[str, np.ndarray] | None = None
    best_selection: tuple = (float("-inf"),)
    stale = 0
    log_records = []

    for epoch in range(1, config.epochs + 1):
        order = rng_shuffle.permutation(len(train_facts))
        labeled: list[LabeledFact] = []
        for idx in order:
            positive = train_facts[int(idx)]
            labeled.append(LabeledFact(positive, 1))
            for _ in range(config.negatives_per_positive):
                labeled.append(LabeledFact(sample_negative(positive, train_graph, rng_negatives), 0))

        epoch_loss = 0.0
        for start in range(0, len(labeled), config.batch_size):
            batch = labeled[start : start + config.batch_size]
            inputs = [cache.model_input(item.triple, rng_paths) for item in batch]
            labels = np.array([item.label for item in batch])
            scores = model.training_scores(inputs, rng_dropout)
            loss = bce_loss(scores, labels)
            ad.zero_grad(params)
            ad.backward(loss)
            # ablated stacks (and the path stack on path-free batches) stay untouched
            ad.adam_step([p for p in params if p.grad is not None], optimizer)
            epoch_loss += float(loss.data)
        report.epoch_losses.append(epoch_loss)

        if val_groups:
            scores = model.score_batch(flat_val)
            offset = 0
            credits = []
            reciprocal = []
            for group in val_groups:
                chunk = scores[offset : offset + len(group)]
                offset += len(group)
                credits.append(hits_credit(chunk[0], chunk[1:]))
                reciprocal.append(1.0 / rank(chunk[0], chunk[1:]))
            metric = float(np.mean(credits))
            # Hits@10 saturates long before scores separate; MRR over the same
            # frozen candidates breaks ties so selection keeps sharpening.
            selection = (metric, float(np.mean(reciprocal)))
        else:
            metric = -epoch_loss  # no validation split: fall back to train loss
            selection = (metric,)
        report.val_metrics.append(metric)

        improved = selection > best_selection
        if improved:
            best_selection = selection
            report.best_metric = metric
            report.best_epoch = epoch
            best_state = {name: p.data.copy() for name, p in model.params.items()}
            stale = 0
        else:
            stale += 1
        log_records.append(
            {"epoch": epoch, "train_loss": epoch_loss, "val_hits10": metric, "improved": improved}
        )
        logger.debug("epoch %d loss=%.4f val=%.4f", epoch, epoch_loss, metric)
        if stale >= config.patience:
            break

    if best_state is not None:
        for name, values in best_state.items():
            model.params[name].data = values
    if checkpoint_path is not None:
        model.save(checkpoint_path)
        report.best_checkpoint_path = str(checkpoint_path)
    if log_path is not None:
        with open(log_path, "w", encoding="utf-8") as fh:
            for record in log_records:
                fh.write(json.dumps(record) + "\n")
    return report


@dataclass(frozen=True)
class GridCell:
    lr: float
    dropout: float
    val_metric: float
    best_epoch: int
    epochs_run: int


@dataclass
class GridSearchResult:
    cells: list[GridCell]
    best_lr: float
    best_dropout: float
    best_report: TrainReport
    best_model: PathContextModel


def grid_search(
    train_graph: KnowledgeGraph,
    train_facts,
    valid_facts,
    model_config: ModelConfig,
    train_config: TrainConfig,
    lr_grid=LR_GRID,
    dropout_grid=DROPOUT_GRID,
) -> GridSearchResult:
    """Train every (lr, dropout) cell and keep the best validation Hits@10.

    Ties break toward the lower learning rate, then the lower dropout; every
    cell starts from the same seeded initialization.
    """
    if not lr_grid or not dropout_grid:
        raise ContractError("grids must be nonempty")
    cells: list[GridCell] = []
    best: tuple[float, float, float] | None = None
    best_report: TrainReport | None = None
    best_model: PathContextModel | None = None
    for lr in lr_grid:
        for dropout in dropout_grid:
            model = PathContextModel(
                replace(model_config, dropout=dropout), train_graph.vocab, seed=train_config.seed
            )
            report = fit(train_graph, train_facts, valid_facts, model, replace(train_config, lr=lr))
            cells.append(GridCell(lr, dropout, report.best_metric, report.best_epoch, len(report.epoch_losses)))
            key = (-report.best_metric, lr, dropout)
            if best is None or key < best:
                best = key
                best_report = report
                best_model = model
    assert best is not None and best_model is not None and best_report is not None
    return GridSearchResult(cells, best[1], best[2], best_report, best_model)
