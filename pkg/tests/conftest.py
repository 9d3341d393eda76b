import numpy as np
import pytest

from pathctx.kg import KnowledgeGraph, RelationVocab, Triple, augment_inverse, build_vocab

RELATION_NAMES = ("r0", "r1", "r2", "r3")


def random_name_triples(rng: np.random.Generator, n_entities=8, n_relations=4, edge_prob=0.3):
    """Random multigraph over small entity/relation pools (test oracle input)."""
    triples = []
    for h in range(n_entities):
        for t in range(n_entities):
            if h == t:
                continue
            for r in range(n_relations):
                if rng.random() < edge_prob:
                    triples.append((f"e{h}", RELATION_NAMES[r], f"e{t}"))
    return triples


def make_graph(name_triples, extra_relations=()):
    vocab = build_vocab({t[1] for t in name_triples} | set(extra_relations))
    return augment_inverse(name_triples, vocab)


def dfs_path_oracle(view, head: int, tail: int, max_len: int) -> set[tuple[int, ...]]:
    """Brute-force enumeration of entity-simple relation sequences head -> tail.

    Independent of the bidirectional implementation: plain depth-limited DFS
    over the adjacency, kept deliberately simple.
    """
    found: set[tuple[int, ...]] = set()
    if head == tail:
        return found

    def walk(node, visited, rels):
        if rels and node == tail:
            found.add(rels)
            return
        if len(rels) == max_len:
            return
        for rel, nxt in view.out_edges(node):
            if nxt not in visited:
                walk(nxt, visited | {nxt}, rels + (rel,))

    walk(head, {head}, ())
    return found


@pytest.fixture
def toy_graph():
    """Tiny sports-style graph used across modules."""
    triples = [
        ("curry", "plays_at", "warriors"),
        ("iguodala", "plays_at", "warriors"),
        ("warriors", "located_in", "bay_area"),
        ("curry", "lives_in", "bay_area"),
        ("curry", "teammate", "iguodala"),
    ]
    return make_graph(triples)
