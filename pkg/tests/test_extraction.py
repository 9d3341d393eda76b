import numpy as np
import pytest

from pathctx.errors import ContractError
from pathctx.extraction import (
    ExtractionConfig,
    PathSet,
    enumerate_paths,
    extract_context,
    extract_example,
    sample_paths,
)
from pathctx.kg import Triple, augment_inverse, build_vocab, exclude_edge

from conftest import dfs_path_oracle, make_graph, random_name_triples


def noop_view(graph):
    # a view that excludes nothing: use a relation id that labels no edge
    return exclude_edge(graph, Triple(0, graph.vocab.base_count - 1, 0))


# ---------------------------------------------------------------------------
# enumerate_paths
# ---------------------------------------------------------------------------


def test_figure_style_inverse_hop():
    graph = make_graph([("curry", "plays_at", "warriors"), ("iguodala", "plays_at", "warriors")])
    vocab = graph.vocab
    paths = enumerate_paths(
        graph, graph.entity_id("curry"), graph.entity_id("iguodala"), 2
    )
    rel = vocab.id_for("plays_at")
    assert (rel, vocab.inverse_of(rel)) in paths.paths


def test_single_edge_path():
    graph = make_graph([("A", "r", "B")])
    paths = enumerate_paths(graph, graph.entity_id("A"), graph.entity_id("B"), 4)
    assert paths.paths == ((graph.vocab.id_for("r"),),)
    assert not paths.truncated


def test_same_endpoints_yield_empty():
    graph = make_graph([("A", "r", "B"), ("B", "s", "A")])
    assert enumerate_paths(graph, graph.entity_id("A"), graph.entity_id("A"), 4).paths == ()


def test_unknown_entity_yields_empty():
    graph = make_graph([("A", "r", "B")])
    assert enumerate_paths(graph, 99, graph.entity_id("B"), 3).paths == ()


def test_bad_length_rejected():
    graph = make_graph([("A", "r", "B")])
    with pytest.raises(ContractError):
        enumerate_paths(graph, 0, 1, 0)


def test_paths_sorted_by_length_then_ids():
    graph = make_graph(
        [("A", "r", "B"), ("A", "s", "X"), ("X", "r", "B"), ("A", "r", "Y"), ("Y", "s", "B")]
    )
    out = enumerate_paths(graph, graph.entity_id("A"), graph.entity_id("B"), 3)
    keys = [(len(p), p) for p in out.paths]
    assert keys == sorted(keys)


@pytest.mark.parametrize("seed", range(40))
def test_matches_dfs_oracle_on_random_graphs(seed):
    rng = np.random.default_rng(seed)
    graph = make_graph(random_name_triples(rng, n_entities=6, edge_prob=0.3), extra_relations=("pad",))
    view = noop_view(graph)
    h, t = int(rng.integers(graph.n_entities)), int(rng.integers(graph.n_entities))
    for k in (1, 2, 3, 4):
        got = set(enumerate_paths(view, h, t, k).paths)
        assert got == dfs_path_oracle(view, h, t, k), (seed, h, t, k)


@pytest.mark.parametrize("seed", range(10))
def test_length_monotonicity(seed):
    rng = np.random.default_rng(100 + seed)
    graph = make_graph(random_name_triples(rng, n_entities=6, edge_prob=0.3))
    h, t = 0, graph.n_entities - 1
    previous: set = set()
    for k in (1, 2, 3, 4):
        current = set(enumerate_paths(graph, h, t, k).paths)
        assert previous <= current
        previous = current


# ---------------------------------------------------------------------------
# sample_paths
# ---------------------------------------------------------------------------


def test_sample_identity_under_cap():
    ps = PathSet(((1,), (2,), (1, 2), (2, 1), (3,)))
    out = sample_paths(ps, 300, np.random.default_rng(0))
    assert out.paths == ps.paths
    assert not out.truncated


def test_sample_empty():
    out = sample_paths(PathSet(()), 300, np.random.default_rng(0))
    assert out.paths == () and not out.truncated


def test_sample_truncates_deterministically():
    paths = tuple((i, i + 1) for i in range(500))
    first = sample_paths(PathSet(paths), 300, np.random.default_rng(42))
    second = sample_paths(PathSet(paths), 300, np.random.default_rng(42))
    assert len(first.paths) == 300
    assert len(set(first.paths)) == 300
    assert first.truncated
    assert first.paths == second.paths
    assert set(first.paths) <= set(paths)


# ---------------------------------------------------------------------------
# extract_context
# ---------------------------------------------------------------------------


def test_context_sees_inverse_of_incoming():
    graph = make_graph([("A", "r", "B")])
    ctx = extract_context(graph, graph.entity_id("B"), 64, np.random.default_rng(0))
    assert ctx.relations == (graph.vocab.inverse_of(graph.vocab.id_for("r")),)


def test_context_unknown_entity_empty():
    graph = make_graph([("A", "r", "B")])
    assert extract_context(graph, 42, 64, np.random.default_rng(0)).relations == ()


def test_context_is_type_set_not_multiset():
    graph = make_graph([("A", "r1", "B"), ("A", "r1", "C"), ("A", "r2", "D")])
    ctx = extract_context(graph, graph.entity_id("A"), 64, np.random.default_rng(0))
    assert ctx.relations == (graph.vocab.id_for("r1"), graph.vocab.id_for("r2"))


def test_context_order_independent_of_input_order():
    forward = make_graph([("A", "r1", "B"), ("A", "r2", "C")])
    backward = make_graph([("A", "r2", "C"), ("A", "r1", "B")])
    rng = np.random.default_rng(0)
    assert (
        extract_context(forward, forward.entity_id("A"), 64, rng).relations
        == extract_context(backward, backward.entity_id("A"), 64, rng).relations
    )


def test_context_cap_sampling_sorted():
    triples = [("A", f"rel{i:02d}", f"B{i}") for i in range(10)]
    graph = make_graph(triples)
    ctx = extract_context(graph, graph.entity_id("A"), 4, np.random.default_rng(1))
    assert len(ctx.relations) == 4
    assert ctx.truncated
    assert list(ctx.relations) == sorted(ctx.relations)


# ---------------------------------------------------------------------------
# extract_example (leakage guard)
# ---------------------------------------------------------------------------


def test_only_evidence_is_query_edge_itself():
    graph = make_graph([("A", "r", "B")])
    fact = graph.triple_from_names("A", "r", "B")
    example = extract_example(graph, fact, ExtractionConfig(), np.random.default_rng(0))
    assert example.paths.paths == ()
    assert example.head_context.relations == ()
    assert example.tail_context.relations == ()


def test_hand_enumerated_four_edge_case():
    graph = make_graph([("A", "r", "B"), ("A", "p", "X"), ("X", "q", "C")])
    vocab = graph.vocab
    fact = graph.triple_from_names("A", "r", "C")
    example = extract_example(graph, fact, ExtractionConfig(), np.random.default_rng(0))
    assert example.paths.paths == ((vocab.id_for("p"), vocab.id_for("q")),)
    assert set(example.head_context.relations) == {vocab.id_for("r"), vocab.id_for("p")}
    assert example.tail_context.relations == (vocab.inverse_of(vocab.id_for("q")),)


def test_no_query_leakage_without_parallel_support():
    graph = make_graph([("A", "r", "B"), ("A", "s", "C"), ("C", "s", "B")])
    fact = graph.triple_from_names("A", "r", "B")
    example = extract_example(graph, fact, ExtractionConfig(), np.random.default_rng(0))
    rel = graph.vocab.id_for("r")
    assert (rel,) not in example.paths.paths
    assert rel not in example.head_context.relations


def test_parallel_edge_keeps_relation_in_context():
    graph = make_graph([("A", "r", "B"), ("A", "r", "C")])
    fact = graph.triple_from_names("A", "r", "B")
    example = extract_example(graph, fact, ExtractionConfig(), np.random.default_rng(0))
    rel = graph.vocab.id_for("r")
    # supported by the other r-edge (A, r, C), so r legitimately stays
    assert rel in example.head_context.relations
    assert (rel,) not in example.paths.paths  # but no direct path to B


def test_extraction_unchanged_by_downstream_ablation():
    # ablation is a fusion-time concern; extraction output is mode-independent
    graph = make_graph([("A", "r", "B"), ("A", "p", "X"), ("X", "q", "C")])
    fact = graph.triple_from_names("A", "r", "C")
    a = extract_example(graph, fact, ExtractionConfig(), np.random.default_rng(5))
    b = extract_example(graph, fact, ExtractionConfig(), np.random.default_rng(5))
    assert a == b
