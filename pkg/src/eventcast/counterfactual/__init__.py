"""Counterfactual event generation against a pluggable text-generation backend."""

from .augment import (
    CounterfactualRecord,
    CounterfactualSet,
    EventIndex,
    augment_event,
    chunk_and_summarize,
    generate_counterfactual,
    group_by_parent,
    parse_rating,
    rate_sentiment,
    read_counterfactuals,
    sample_counterfactuals,
    write_counterfactuals,
)
from .backends import HttpBackend, StubBackend, TextGenBackend, make_backend

__all__ = [
    "CounterfactualRecord",
    "CounterfactualSet",
    "EventIndex",
    "HttpBackend",
    "StubBackend",
    "TextGenBackend",
    "augment_event",
    "chunk_and_summarize",
    "generate_counterfactual",
    "group_by_parent",
    "make_backend",
    "parse_rating",
    "rate_sentiment",
    "read_counterfactuals",
    "sample_counterfactuals",
    "write_counterfactuals",
]
