"""Nested term extraction by span classification and top-K ranking."""

from .config import ModelConfig
from .corpus import (AnnotatedSentence, CorpusStats, SplitSpec, compute_stats, load_corpus,
                     load_plain_format, parse_nested_annotations, split_corpus, write_plain_format)
from .model import Prediction, TermExtractor, rank_topk, train
from .spans import SpanCandidate, enumerate_spans, label_candidates

__version__ = "0.1.0"

__all__ = [
    "AnnotatedSentence", "CorpusStats", "ModelConfig", "Prediction", "SpanCandidate", "SplitSpec",
    "TermExtractor", "compute_stats", "enumerate_spans", "label_candidates", "load_corpus",
    "load_plain_format", "parse_nested_annotations", "rank_topk", "split_corpus", "train",
    "write_plain_format",
]
