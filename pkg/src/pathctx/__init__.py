"""Inductive knowledge-graph fact scoring from relational paths and endpoint context."""

__version__ = "0.1.0"

from .kg import KnowledgeGraph, RelationVocab, Triple, augment_inverse, build_vocab, load_triples
from .extraction import ExtractionConfig, ModelInput, PathSet, RelationalContext, extract_example
from .model import ModelConfig, PathContextModel

__all__ = [
    "ExtractionConfig",
    "KnowledgeGraph",
    "ModelConfig",
    "ModelInput",
    "PathContextModel",
    "PathSet",
    "RelationVocab",
    "RelationalContext",
    "Triple",
    "augment_inverse",
    "build_vocab",
    "extract_example",
    "load_triples",
]
