"""Synthetic composition-rule benchmark generator.

Builds entity-disjoint training and inference worlds sharing the same
generative law: relations r1 and r2 are fixed-point-free permutations of the
entities, rt holds exactly where the r1-then-r2 chain lands, and three
distractor permutations (d1, d2, d3) add structure that carries no signal
about rt. Because every entity has identical relation types around it, the
target relation is only predictable from the two-hop path, which is what an
inductive path reasoner must pick up.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .kg import NameTriple
from .seeding import substream

RULE_TARGET = "rt"
RULE_BODY = ("r1", "r2")
DISTRACTORS = ("d1", "d2", "d3")


@dataclass(frozen=True)
class WorldSummary:
    directory: str
    n_entities: int
    n_train: int
    n_valid: int
    n_test: int


def _fixed_point_free(n: int, rng: np.random.Generator) -> np.ndarray:
    while True:
        perm = rng.permutation(n)
        if not np.any(perm == np.arange(n)):
            return perm


def generate_world(n_entities: int, rng: np.random.Generator, prefix: str):
    """Return (background facts, rule facts) over named entities."""
    idx = np.arange(n_entities)
    while True:
        first = _fixed_point_free(n_entities, rng)
        second = _fixed_point_free(n_entities, rng)
        composed = second[first]
        if not np.any(composed == idx):
            break
    names = [f"{prefix}{i:04d}" for i in range(n_entities)]
    background: list[NameTriple] = []
    for i in range(n_entities):
        background.append((names[i], RULE_BODY[0], names[first[i]]))
        background.append((names[i], RULE_BODY[1], names[second[i]]))
    for relation in DISTRACTORS:
        perm = _fixed_point_free(n_entities, rng)
        background.extend((names[i], relation, names[perm[i]]) for i in range(n_entities))
    rule = [(names[i], RULE_TARGET, names[composed[i]]) for i in range(n_entities)]
    return background, rule


def _write_split(path: str, triples) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for head, relation, tail in triples:
            fh.write(f"{head}\t{relation}\t{tail}\n")


def write_world(
    directory,
    n_entities: int,
    seed: int,
    prefix: str,
    valid_fraction: float = 0.0,
    test_fraction: float = 0.0,
) -> WorldSummary:
    """Generate one world and write train/valid/test files in the standard
    layout. Held-out splits are drawn from the rule facts only, so their
    two-hop evidence always stays in the background."""
    rng = substream(seed, f"synthetic:{prefix}")
    background, rule = generate_world(n_entities, rng, prefix)
    order = rng.permutation(len(rule))
    n_valid = round(valid_fraction * len(rule))
    n_test = round(test_fraction * len(rule))
    valid = [rule[i] for i in order[:n_valid]]
    test = [rule[i] for i in order[n_valid : n_valid + n_test]]
    kept = [rule[i] for i in sorted(order[n_valid + n_test :])]

    os.makedirs(directory, exist_ok=True)
    _write_split(os.path.join(directory, "train.txt"), background + kept)
    _write_split(os.path.join(directory, "valid.txt"), valid)
    _write_split(os.path.join(directory, "test.txt"), test)
    return WorldSummary(str(directory), n_entities, len(background) + len(kept), len(valid), len(test))


def make_benchmark(
    train_dir,
    inference_dir,
    n_train_entities: int = 200,
    n_inference_entities: int = 100,
    seed: int = 0,
) -> tuple[WorldSummary, WorldSummary]:
    """Entity-disjoint pair of worlds: training world with a validation split
    of rule facts, inference world with half its rule facts held out as test
    queries."""
    train = write_world(train_dir, n_train_entities, seed, prefix="a", valid_fraction=0.1)
    inference = write_world(
        inference_dir, n_inference_entities, seed, prefix="b", test_fraction=0.5
    )
    return train, inference


def main(argv=None) -> int:
    import argparse

    parser = argparse.ArgumentParser(description="Generate the composition-rule benchmark datasets.")
    parser.add_argument("train_dir")
    parser.add_argument("inference_dir")
    parser.add_argument("--train-entities", type=int, default=200)
    parser.add_argument("--inference-entities", type=int, default=100)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    train, inference = make_benchmark(
        args.train_dir, args.inference_dir, args.train_entities, args.inference_entities, args.seed
    )
    for summary in (train, inference):
        print(
            f"{summary.directory}: entities={summary.n_entities} train={summary.n_train} "
            f"valid={summary.n_valid} test={summary.n_test}"
        )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
