"""Relational-path enumeration and endpoint-context extraction.

Produces the model input for one query fact: every entity-simple relational
path between the endpoints up to a length bound (deduplicated by relation
sequence and capped), plus the set of outgoing relation types around each
endpoint. All operations are pure given an immutable graph view.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .kg import KnowledgeGraph, Triple, exclude_edge

# A relational path is the tuple of relation IDs along an entity-simple path;
# intermediate entities are discarded.
RelationPath = tuple[int, ...]


@dataclass(frozen=True)
class PathSet:
    """Deduplicated relation-ID sequences between one entity pair."""

    paths: tuple[RelationPath, ...]
    truncated: bool = False

    def __len__(self) -> int:
        return len(self.paths)


@dataclass(frozen=True)
class RelationalContext:
    """Distinct outgoing relation IDs around one entity, sorted ascending."""

    relations: tuple[int, ...]
    truncated: bool = False

    def __len__(self) -> int:
        return len(self.relations)


@dataclass(frozen=True)
class ExtractionConfig:
    max_path_len: int = 4
    path_cap: int = 300
    context_cap: int = 64


@dataclass(frozen=True)
class ModelInput:
    """Everything the scorer consumes for one query fact."""

    query_relation: int
    head_context: RelationalContext
    tail_context: RelationalContext
    paths: PathSet


def _path_sort_key(path: RelationPath) -> tuple[int, RelationPath]:
    return (len(path), path)


def enumerate_paths(view, head: int, tail: int, max_len: int) -> PathSet:
    """All relation sequences realized by entity-simple paths head -> tail of
    length <= max_len, deduplicated and sorted by (length, relation IDs).

    Uses a bidirectional depth-limited search: forward partial paths from the
    head up to depth ceil(max_len/2), backward partial paths from the tail
    (walking inverse edges) for the remaining depth, joined on their meeting
    entity with an entity-simplicity check across the concatenation.
    """
    if max_len < 1:
        raise ContractError("max_len must be >= 1")
    if head == tail:
        return PathSet(())

    inverse_of = view.vocab.inverse_of
    f_depth = (max_len + 1) // 2
    b_depth = max_len - f_depth

    sequences: set[RelationPath] = set()
    # meeting entity -> list of (visited entities, relation sequence)
    forward: dict[int, list[tuple[frozenset[int], RelationPath]]] = {}

    def walk_forward(node: int, visited: frozenset[int], rels: RelationPath) -> None:
        if rels and node == tail:
            sequences.add(rels)
            return
        if len(rels) == f_depth:
            forward.setdefault(node, []).append((visited, rels))
            return
        for rel, nxt in view.out_edges(node):
            if nxt not in visited:
                walk_forward(nxt, visited | {nxt}, rels + (rel,))

    walk_forward(head, frozenset((head,)), ())

    if b_depth > 0 and forward:

        def walk_backward(node: int, visited: frozenset[int], rels: RelationPath) -> None:
            if rels:
                for f_visited, f_rels in forward.get(node, ()):
                    if len(f_visited & visited) == 1:  # only the meeting entity
                        suffix = tuple(inverse_of(r) for r in reversed(rels))
                        sequences.add(f_rels + suffix)
            if len(rels) == b_depth:
                return
            for rel, nxt in view.out_edges(node):
                # A backward partial through the head can never join simply.
                if nxt != head and nxt not in visited:
                    walk_backward(nxt, visited | {nxt}, rels + (rel,))

        walk_backward(tail, frozenset((tail,)), ())

    return PathSet(tuple(sorted(sequences, key=_path_sort_key)))


def sample_paths(pathset: PathSet, cap: int, rng: np.random.Generator) -> PathSet:
    """Uniform sample without replacement down to ``cap`` paths; identity when under it."""
    if cap < 1:
        raise ContractError("path cap must be >= 1")
    if len(pathset.paths) <= cap:
        return pathset
    chosen = rng.choice(len(pathset.paths), size=cap, replace=False)
    kept = sorted((pathset.paths[i] for i in chosen), key=_path_sort_key)
    return PathSet(tuple(kept), truncated=True)


def extract_context(view, entity: int, cap: int, rng: np.random.Generator) -> RelationalContext:
    """Distinct relation types on the entity's outgoing edges, sorted ascending.

    Inverse augmentation makes incoming edges visible as inverse relations.
    Uniformly sampled down to ``cap`` types when exceeded.
    """
    if cap < 1:
        raise ContractError("context cap must be >= 1")
    rels = sorted({rel for rel, _ in view.out_edges(entity)})
    if len(rels) <= cap:
        return RelationalContext(tuple(rels))
    chosen = rng.choice(len(rels), size=cap, replace=False)
    return RelationalContext(tuple(sorted(rels[i] for i in chosen)), truncated=True)


def extract_example(
    graph: KnowledgeGraph,
    query: Triple,
    config: ExtractionConfig,
    rng: np.random.Generator,
) -> ModelInput:
    """Build the model input for one query fact with the leakage guard applied.

    The query edge and its inverse are excluded from the graph before any
    evidence is gathered, so a training fact can never witness itself.
    """
    view = exclude_edge(graph, query)
    paths = sample_paths(
        enumerate_paths(view, query.head, query.tail, config.max_path_len),
        config.path_cap,
        rng,
    )
    head_ctx = extract_context(view, query.head, config.context_cap, rng)
    tail_ctx = extract_context(view, query.tail, config.context_cap, rng)
    return ModelInput(query.relation, head_ctx, tail_ctx, paths)
