"""Python bindings for the kgrg report generation toolkit."""

from kgrg._core import (
    ConfigError,
    KnowledgeGraph,
    MetricError,
    ParseError,
    auc,
    bleu,
    cider,
    evaluate_texts,
    normalize_adjacency,
    rouge_l,
    run_cli,
    split_sentences,
    t_interval,
    tokenize,
)

__all__ = [
    "ConfigError",
    "KnowledgeGraph",
    "MetricError",
    "ParseError",
    "auc",
    "bleu",
    "cider",
    "evaluate_texts",
    "normalize_adjacency",
    "rouge_l",
    "run_cli",
    "split_sentences",
    "t_interval",
    "tokenize",
]
