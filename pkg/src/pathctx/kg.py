"""Graph data model: triple files, relation vocabulary with paired inverses,
inverse-augmented adjacency, and leakage-safe edge-exclusion views."""

from __future__ import annotations

import logging
from dataclasses import dataclass

from .errors import ContractError, DataError, ParseError, UnknownRelationError

logger = logging.getLogger(__name__)

INVERSE_SUFFIX = "^{-1}"
SPECIAL_NAMES = ("[PCLS]", "[HCLS]", "[TCLS]")

NameTriple = tuple[str, str, str]


@dataclass(frozen=True)
class Triple:
    head: int
    relation: int
    tail: int


class RelationVocab:
    """Relation vocabulary: base relations, their paired inverses, and the three
    reserved sequence tokens.

    IDs are assigned deterministically: base relations get 0..B-1 in sorted name
    order, inverses get B..2B-1 (inverse of r is r+B), and the three special
    tokens occupy 2B, 2B+1, 2B+2.
    """

    def __init__(self, base_names: tuple[str, ...]):
        self.base_names = tuple(base_names)
        self.base_count = len(self.base_names)
        self.name_to_id = {name: i for i, name in enumerate(self.base_names)}
        if len(self.name_to_id) != self.base_count:
            raise DataError("duplicate relation names in vocabulary")

    @property
    def pcls(self) -> int:
        return 2 * self.base_count

    @property
    def hcls(self) -> int:
        return 2 * self.base_count + 1

    @property
    def tcls(self) -> int:
        return 2 * self.base_count + 2

    @property
    def size(self) -> int:
        return 2 * self.base_count + 3

    def is_special(self, rel: int) -> bool:
        return 2 * self.base_count <= rel < self.size

    def is_base(self, rel: int) -> bool:
        return 0 <= rel < self.base_count

    def inverse_of(self, rel: int) -> int:
        """Involution pairing each relation with its inverse; special tokens map to themselves."""
        if not 0 <= rel < self.size:
            raise UnknownRelationError(f"relation id {rel} out of range")
        if self.is_special(rel):
            return rel
        if rel < self.base_count:
            return rel + self.base_count
        return rel - self.base_count

    def id_for(self, name: str) -> int:
        """Resolve a relation name; names with the '^{-1}' suffix resolve to the inverse."""
        if name.endswith(INVERSE_SUFFIX):
            return self.inverse_of(self.id_for(name[: -len(INVERSE_SUFFIX)]))
        try:
            return self.name_to_id[name]
        except KeyError:
            raise UnknownRelationError(f"unknown relation {name!r}") from None

    def name_of(self, rel: int) -> str:
        if not 0 <= rel < self.size:
            raise UnknownRelationError(f"relation id {rel} out of range")
        if self.is_special(rel):
            return SPECIAL_NAMES[rel - 2 * self.base_count]
        if rel < self.base_count:
            return self.base_names[rel]
        return self.base_names[rel - self.base_count] + INVERSE_SUFFIX

    def __eq__(self, other) -> bool:
        return isinstance(other, RelationVocab) and self.base_names == other.base_names

    def __repr__(self) -> str:
        return f"RelationVocab(base={self.base_count}, size={self.size})"


def build_vocab(relation_names, reuse: RelationVocab | None = None) -> RelationVocab:
    """Build a deterministic vocabulary from base relation names.

    With ``reuse`` given, the trained vocabulary is returned unchanged after
    verifying that every name is already known (the fully-inductive contract:
    inference relations are a subset of training relations).
    """
    names = set(relation_names)
    suffixed = sorted(n for n in names if n.endswith(INVERSE_SUFFIX))
    if suffixed:
        raise DataError(f"relation names may not end with {INVERSE_SUFFIX!r}: {suffixed[:3]}")
    if reuse is not None:
        unseen = names - set(reuse.base_names)
        if unseen:
            raise UnknownRelationError(
                f"relations absent from the training vocabulary: {sorted(unseen)[:5]}"
            )
        return reuse
    return RelationVocab(tuple(sorted(names)))


def load_triples(path) -> list[NameTriple]:
    """Read tab-separated (head, relation, tail) lines, preserving file order.

    Duplicate triples are dropped with a warning; empty lines are skipped.
    """
    triples: list[NameTriple] = []
    seen: set[NameTriple] = set()
    duplicates = 0
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 3 or any(not f.strip() for f in fields):
                raise ParseError(str(path), line_no, f"expected 3 tab-separated fields, got {len(fields)}")
            triple = (fields[0].strip(), fields[1].strip(), fields[2].strip())
            if triple in seen:
                duplicates += 1
                continue
            seen.add(triple)
            triples.append(triple)
    if duplicates:
        logger.warning("%s: dropped %d duplicate triple(s)", path, duplicates)
    return triples


class KnowledgeGraph:
    """Immutable indexed multigraph over entity and relation IDs.

    Every source fact (h, r, t) is stored together with its inverse
    (t, r^{-1}, h), so incoming edges are traversable as outgoing inverse
    edges. Adjacency lists are sorted for determinism. Safe for concurrent
    readers after construction.
    """

    def __init__(self, vocab: RelationVocab, entity_names: tuple[str, ...], facts: set[Triple]):
        self.vocab = vocab
        self.entity_names = entity_names
        self.name_to_entity = {name: i for i, name in enumerate(entity_names)}
        self.fact_set = frozenset(facts)
        self.source_fact_count = len(self.fact_set) // 2
        out: list[list[tuple[int, int]]] = [[] for _ in entity_names]
        for f in self.fact_set:
            out[f.head].append((f.relation, f.tail))
        self.out_index: tuple[tuple[tuple[int, int], ...], ...] = tuple(
            tuple(sorted(edges)) for edges in out
        )

    @property
    def n_entities(self) -> int:
        return len(self.entity_names)

    @property
    def n_edges(self) -> int:
        return len(self.fact_set)

    def out_edges(self, entity: int) -> tuple[tuple[int, int], ...]:
        if 0 <= entity < len(self.out_index):
            return self.out_index[entity]
        return ()

    def contains(self, triple: Triple) -> bool:
        return triple in self.fact_set

    def entity_id(self, name: str) -> int:
        try:
            return self.name_to_entity[name]
        except KeyError:
            raise DataError(f"unknown entity {name!r}") from None

    def triple_from_names(self, head: str, relation: str, tail: str) -> Triple:
        return Triple(self.entity_id(head), self.vocab.id_for(relation), self.entity_id(tail))

    def triple_names(self, triple: Triple) -> NameTriple:
        return (
            self.entity_names[triple.head],
            self.vocab.name_of(triple.relation),
            self.entity_names[triple.tail],
        )


class GraphView:
    """Read-only view of a graph with one fact (and its inverse) removed."""

    def __init__(self, base: KnowledgeGraph, excluded: frozenset[Triple]):
        self.base = base
        self.excluded = excluded
        self._excluded_heads = frozenset(t.head for t in excluded)

    @property
    def vocab(self) -> RelationVocab:
        return self.base.vocab

    @property
    def n_entities(self) -> int:
        return self.base.n_entities

    def out_edges(self, entity: int) -> tuple[tuple[int, int], ...]:
        edges = self.base.out_edges(entity)
        if entity not in self._excluded_heads:
            return edges
        return tuple(
            (rel, dst) for rel, dst in edges if Triple(entity, rel, dst) not in self.excluded
        )

    def contains(self, triple: Triple) -> bool:
        return triple not in self.excluded and self.base.contains(triple)


def augment_inverse(name_triples, vocab: RelationVocab) -> KnowledgeGraph:
    """Index name triples into a KnowledgeGraph, adding (t, r^{-1}, h) for each fact.

    Entity IDs are dense integers assigned in sorted-name order, local to this
    graph; only relation IDs are shared across graphs. Duplicates (including a
    fact given alongside its own inverse) collapse to a single edge pair.
    """
    names = sorted({t[0] for t in name_triples} | {t[2] for t in name_triples})
    entity_of = {name: i for i, name in enumerate(names)}
    facts: set[Triple] = set()
    for head, rel_name, tail in name_triples:
        rel = vocab.id_for(rel_name)
        if vocab.is_special(rel):
            raise DataError(f"special token {rel_name!r} cannot label a fact")
        h, t = entity_of[head], entity_of[tail]
        facts.add(Triple(h, rel, t))
        facts.add(Triple(t, vocab.inverse_of(rel), h))
    return KnowledgeGraph(vocab, tuple(names), facts)


def exclude_edge(graph: KnowledgeGraph, triple: Triple) -> GraphView:
    """View of ``graph`` without ``triple`` and its inverse; the graph is unmodified.

    Used as the leakage guard: evidence extracted for a query fact must not
    contain the query edge itself.
    """
    if isinstance(graph, GraphView):
        raise ContractError("exclude_edge expects the base graph, not a view")
    inverse = Triple(triple.tail, graph.vocab.inverse_of(triple.relation), triple.head)
    return GraphView(graph, frozenset((triple, inverse)))


def contains(graph, triple: Triple) -> bool:
    """Membership test against the (augmented) fact set of a graph or view."""
    return graph.contains(triple)
