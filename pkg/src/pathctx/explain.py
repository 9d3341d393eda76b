"""Per-element contribution scores for one prediction.

The query relation's token aggregates all evidence in the fusion stack, so
its last-layer attention row, averaged over heads, says how much each element
(head context, tail context, each path) drove the result. The query token's
self-attention weight is dropped and the remaining weights renormalized to
sum to 1; the raw row is kept for inspection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .extraction import ModelInput
from .kg import RelationVocab, Triple

QUERY = "query"
HEAD_CONTEXT = "head_context"
TAIL_CONTEXT = "tail_context"
PATH = "path"


@dataclass(frozen=True)
class ContributionEntry:
    kind: str
    relations: tuple[int, ...]
    contribution: float


@dataclass(frozen=True)
class ContributionReport:
    query: Triple
    score: float
    entries: tuple[ContributionEntry, ...]
    raw_weights: tuple[float, ...]  # head-averaged attention incl. the query's self-weight


def contributions(model, inp: ModelInput, query: Triple | None = None) -> ContributionReport:
    """Contribution of every evidence element to the model's score for ``inp``.

    Requires the full (non-ablated) model. Contributions are nonnegative and
    sum to 1 over the n+2 evidence elements.
    """
    model.require_full_mode()
    score, attention = model.fusion_attention(inp)
    weights = attention[:, 0, :].mean(axis=0)
    evidence = weights[1:].astype(np.float64)
    total = evidence.sum()
    normalized = evidence / total if total > 0 else np.full_like(evidence, 1.0 / max(len(evidence), 1))

    descriptors: list[tuple[str, tuple[int, ...]]] = [
        (HEAD_CONTEXT, inp.head_context.relations),
        (TAIL_CONTEXT, inp.tail_context.relations),
    ]
    descriptors += [(PATH, path) for path in inp.paths.paths]
    ordered = sorted(
        ((float(normalized[i]), i, kind, relations) for i, (kind, relations) in enumerate(descriptors)),
        key=lambda item: (-item[0], item[1]),
    )
    entries = [ContributionEntry(kind, relations, c) for c, _, kind, relations in ordered]
    if query is None:
        query = Triple(-1, inp.query_relation, -1)
    return ContributionReport(
        query=query,
        score=score,
        entries=tuple(entries),
        raw_weights=tuple(float(w) for w in weights),
    )


def _describe(entry: ContributionEntry, vocab: RelationVocab) -> str:
    names = [vocab.name_of(r) for r in entry.relations]
    if entry.kind == PATH:
        return "[" + ", ".join(names) + "]"
    prefix = "head" if entry.kind == HEAD_CONTEXT else "tail"
    return prefix + ":{" + ", ".join(names) + "}"


def render_report(
    report: ContributionReport,
    vocab: RelationVocab,
    entity_names=None,
    top_k: int | None = None,
) -> str:
    """Human-readable report: one line per element, contribution to 3 decimals,
    descending, with the top-k elements flagged."""
    lines = []
    if entity_names is not None and report.query.head >= 0 and report.query.tail >= 0:
        head = entity_names[report.query.head]
        tail = entity_names[report.query.tail]
        query = f"({head}, {vocab.name_of(report.query.relation)}, {tail})"
    else:
        query = f"(entity {report.query.head}, {vocab.name_of(report.query.relation)}, entity {report.query.tail})"
    lines.append(f"query {query}  score={report.score:.3f}")
    if not report.entries:
        lines.append("no evidence elements")
        return "\n".join(lines)
    for i, entry in enumerate(report.entries):
        flag = " *" if top_k is not None and i < top_k else ""
        lines.append(f"{entry.contribution:.3f}  {_describe(entry, vocab)}{flag}")
    return "\n".join(lines)
