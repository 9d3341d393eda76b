"""Ranking evaluation under the 50-negative protocol.

Each query fact is ranked against sampled corruptions of its head or tail.
Ties take the mean rank of the tied block; Hits@10 uses the expected
membership of the true fact in the top 10 under uniform placement within its
tie block, so a constant scorer lands at the all-ties closed forms (rank 26,
Hits@10 = 10/51) instead of an arbitrary extreme. Results are averaged over
independent negative-sampling seeds.
"""

from __future__ import annotations

import multiprocessing
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, UnknownRelationError
from .extraction import ExtractionConfig, extract_example
from .kg import KnowledgeGraph, Triple
from .seeding import substream

DEFAULT_SEEDS = (11, 12, 13, 14, 15)


@dataclass(frozen=True)
class RankingResult:
    query: Triple
    rank: float
    true_score: float
    negative_scores: tuple[float, ...]
    shortfall: bool = False


@dataclass(frozen=True)
class Metrics:
    mrr: float
    hits10: float
    n_queries: int
    seed: int | None = None


@dataclass(frozen=True)
class EvalReport:
    per_seed: tuple[Metrics, ...]
    rankings: dict[int, list[RankingResult]]
    mean_mrr: float
    std_mrr: float
    mean_hits10: float
    std_hits10: float


def rank(true_score: float, negative_scores) -> float:
    """Mean-tie rank: 1 + #{strictly greater} + #{equal} / 2."""
    negatives = np.asarray(negative_scores, dtype=np.float64)
    true = float(true_score)
    greater = int((negatives > true).sum())
    equal = int((negatives == true).sum())
    return 1.0 + greater + equal / 2.0


def hits_credit(true_score: float, negative_scores, k: int = 10) -> float:
    """Expected top-k membership with the true fact placed uniformly in its tie block."""
    negatives = np.asarray(negative_scores, dtype=np.float64)
    true = float(true_score)
    greater = int((negatives > true).sum())
    equal = int((negatives == true).sum())
    first = 1 + greater
    return float(np.clip((k - first + 1) / (equal + 1), 0.0, 1.0))


def compute_metrics(ranks, seed: int | None = None) -> Metrics:
    """MRR and Hits@10 from a list of ranks alone (exact rank <= 10 test)."""
    values = np.asarray(list(ranks), dtype=np.float64)
    if values.size == 0:
        raise ContractError("compute_metrics needs at least one rank")
    return Metrics(
        mrr=float((1.0 / values).mean()),
        hits10=float((values <= 10).mean()),
        n_queries=int(values.size),
        seed=seed,
    )


def sample_eval_negatives(
    fact: Triple,
    graph: KnowledgeGraph,
    count: int = 50,
    rng: np.random.Generator | None = None,
    extra_known=frozenset(),
) -> list[Triple]:
    """Sample ``count`` distinct corrupted triples absent from the known fact set.

    Each corruption replaces the head or tail (coin flip per negative) with a
    uniform random entity. On small graphs the pool can run dry; the shorter
    list is returned and the caller flags the shortfall.
    """
    if rng is None:
        raise ContractError("sample_eval_negatives needs an rng")
    n = graph.n_entities
    negatives: list[Triple] = []
    seen: set[Triple] = {fact}
    budget = max(1000, count * 40)
    for _ in range(budget):
        if len(negatives) == count:
            break
        if int(rng.integers(2)) == 0:
            candidate = Triple(int(rng.integers(n)), fact.relation, fact.tail)
        else:
            candidate = Triple(fact.head, fact.relation, int(rng.integers(n)))
        if candidate in seen:
            continue
        seen.add(candidate)
        if graph.contains(candidate) or candidate in extra_known:
            continue
        negatives.append(candidate)
    return negatives


class ModelScorer:
    """Scores a query and its negatives by extracting model inputs and batching
    one forward pass per candidate set."""

    def __init__(self, model, extraction: ExtractionConfig | None = None):
        self.model = model
        self.extraction = extraction if extraction is not None else model.config.extraction()

    def score_candidates(self, graph, fact, negatives, rng):
        inputs = [extract_example(graph, c, self.extraction, rng) for c in (fact, *negatives)]
        scores = self.model.score_batch(inputs)
        return float(scores[0]), scores[1:]


# worker-process state for parallel ranking (populated by fork initializer)
_EVAL_STATE: dict = {}


def _init_eval_state(scorer, graph, negatives, known) -> None:
    _EVAL_STATE.update(scorer=scorer, graph=graph, negatives=negatives, known=known)


def _rank_one(job: tuple[int, Triple]) -> RankingResult:
    """Rank one (seed, fact) pair; rng substreams are keyed by content, so the
    result is independent of scheduling order."""
    seed, fact = job
    scorer, graph = _EVAL_STATE["scorer"], _EVAL_STATE["graph"]
    negatives, known = _EVAL_STATE["negatives"], _EVAL_STATE["known"]
    tag = f"{fact.head}:{fact.relation}:{fact.tail}"
    negs = sample_eval_negatives(
        fact, graph, negatives, substream(seed, f"eval_negatives:{tag}"), extra_known=known
    )
    true_score, neg_scores = scorer.score_candidates(graph, fact, negs, substream(seed, f"eval_extract:{tag}"))
    return RankingResult(
        query=fact,
        rank=rank(true_score, neg_scores),
        true_score=float(true_score),
        negative_scores=tuple(float(s) for s in neg_scores),
        shortfall=len(negs) < negatives,
    )


def evaluate(
    scorer,
    inference_graph: KnowledgeGraph,
    test_facts,
    seeds=DEFAULT_SEEDS,
    negatives: int = 50,
    workers: int = 1,
) -> EvalReport:
    """Rank every test fact under fresh negatives per seed; report per-seed and
    aggregate MRR / Hits@10 (mean and standard deviation across seeds).

    The inference graph is the background only: test facts are never inserted,
    so no leakage exclusion is required, and negatives are filtered against
    background and test facts alike. ``workers`` > 1 fans queries out over
    processes against the frozen scorer; results are identical either way.
    """
    test_facts = list(test_facts)
    if not test_facts:
        raise ContractError("evaluate needs at least one test fact")
    vocab = inference_graph.vocab
    for fact in test_facts:
        if not 0 <= fact.relation < 2 * vocab.base_count:
            raise UnknownRelationError(f"query relation id {fact.relation} not in the trained vocabulary")
    if not hasattr(scorer, "score_candidates"):
        scorer = ModelScorer(scorer)

    known = frozenset(test_facts)
    jobs = [(seed, fact) for seed in seeds for fact in test_facts]
    _init_eval_state(scorer, inference_graph, negatives, known)
    if workers > 1:
        context = multiprocessing.get_context("fork")
        with context.Pool(
            workers, initializer=_init_eval_state, initargs=(scorer, inference_graph, negatives, known)
        ) as pool:
            flat = pool.map(_rank_one, jobs, chunksize=max(1, len(jobs) // (workers * 4)))
    else:
        flat = [_rank_one(job) for job in jobs]

    per_seed: list[Metrics] = []
    rankings: dict[int, list[RankingResult]] = {}
    for i, seed in enumerate(seeds):
        results = flat[i * len(test_facts) : (i + 1) * len(test_facts)]
        rankings[seed] = results
        per_seed.append(
            Metrics(
                mrr=float(np.mean([1.0 / r.rank for r in results])),
                hits10=float(np.mean([hits_credit(r.true_score, r.negative_scores) for r in results])),
                n_queries=len(results),
                seed=seed,
            )
        )
    mrrs = np.array([m.mrr for m in per_seed])
    hits = np.array([m.hits10 for m in per_seed])
    return EvalReport(
        per_seed=tuple(per_seed),
        rankings=rankings,
        mean_mrr=float(mrrs.mean()),
        std_mrr=float(mrrs.std()),
        mean_hits10=float(hits.mean()),
        std_hits10=float(hits.std()),
    )
