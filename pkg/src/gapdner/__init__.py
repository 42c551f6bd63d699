"""Token-pair grid labeling and path decoding for discontinuous entity mentions."""

from gapdner.data import (
    AnnotatedExample,
    DataError,
    EntityMention,
    LabelSet,
    Sentence,
    derive_label_set,
    parse_corpus,
    write_corpus,
)
from gapdner.decoder import brute_force_decode, build_edge_graph, decode_entities, enumerate_valid_paths
from gapdner.scheme import ConflictReport, GridLabelMatrix, encode_grid, spans_of

__version__ = "0.1.0"

__all__ = [
    "AnnotatedExample",
    "ConflictReport",
    "DataError",
    "EntityMention",
    "GridLabelMatrix",
    "LabelSet",
    "Sentence",
    "brute_force_decode",
    "build_edge_graph",
    "decode_entities",
    "derive_label_set",
    "encode_grid",
    "enumerate_valid_paths",
    "parse_corpus",
    "spans_of",
    "write_corpus",
]
