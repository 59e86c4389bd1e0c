"""Model/run configuration; config files may use the reference hyper-parameter key names."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml


@dataclass
class ModelConfig:
    # hyper-parameters of the reference setup
    word_embedding_dim: int = 150
    pos_embedding_dim: int = 30
    word_lstm_hidden: int = 150
    span_length_dim: int = 30
    word_lstm_layers: int = 2
    pos_lstm_layers: int = 1
    learning_rate: float = 0.01
    batch_size: int = 100
    seed: int = 626
    dropout: float = 0.6
    term_ratio: float = 0.23
    early_stop: int = 26

    # gap-filling choices
    max_span_length: int = 5
    char_embedding_dim: int = 30
    char_cnn_window: int = 3
    char_cnn_filters: int = 50
    bidirectional: bool = True
    lowercase_words: bool = False
    min_count: int = 1
    features: tuple[str, ...] = ("base",)  # base, pos, pretrained, external
    pos_mode: str = "concat"  # concat | source
    pos_lstm_hidden: int = 15
    external_dim: int = 0
    external_mode: str = "source"  # concat | source
    external_lstm_hidden: int = 15
    pretrained_path: str | None = None
    grad_clip: float = 0.0
    max_epochs: int = 100
    stage2_max_epochs: int = 100
    selection: str = "recall"  # which stage-1 checkpoint seeds stage 2: recall | loss
    freeze_encoder: bool = True
    classifier_threshold: float = 0.5
    max_sentence_length: int = 512
    count_unreachable: bool = True

    def __post_init__(self):
        self.features = tuple(self.features)
        dims = ["word_embedding_dim", "word_lstm_hidden", "span_length_dim", "word_lstm_layers",
                "char_embedding_dim", "char_cnn_window", "char_cnn_filters", "max_span_length",
                "batch_size", "pos_embedding_dim", "pos_lstm_hidden", "pos_lstm_layers",
                "external_lstm_hidden"]
        for name in dims:
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.term_ratio <= 0:
            raise ValueError("term_ratio must be > 0")
        unknown = set(self.features) - {"base", "pos", "pretrained", "external"}
        if unknown:
            raise ValueError(f"unknown feature sources: {sorted(unknown)}")
        if self.pos_mode not in ("concat", "source") or self.external_mode not in ("concat", "source"):
            raise ValueError("pos_mode/external_mode must be 'concat' or 'source'")
        if self.selection not in ("recall", "loss"):
            raise ValueError("selection must be 'recall' or 'loss'")
        if "external" in self.features and self.external_dim < 1:
            raise ValueError("external feature source requires external_dim >= 1")

    @property
    def use_pos(self) -> bool:
        return "pos" in self.features

    @property
    def use_external(self) -> bool:
        return "external" in self.features

    @property
    def hidden_dim(self) -> int:
        return self.word_lstm_hidden * (2 if self.bidirectional else 1)

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["features"] = list(self.features)
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ModelConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **kw) -> "ModelConfig":
        return dataclasses.replace(self, **kw)


# config-file key -> ModelConfig field
REFERENCE_KEYS = {
    "DIM_WordEmbedding": "word_embedding_dim",
    "DIM_POS-tagEmbedding": "pos_embedding_dim",
    "DIM_WordLSTM": "word_lstm_hidden",
    "DIM_SpanLength": "span_length_dim",
    "WordLSTMLayers": "word_lstm_layers",
    "POS-tagLSTMLayers": "pos_lstm_layers",
    "LearningRate": "learning_rate",
    "BatchSize": "batch_size",
    "RandomSeed": "seed",
    "Dropout": "dropout",
    "TermRatio": "term_ratio",
    "EarlyStop": "early_stop",
}


def load_config_file(path: str | Path) -> dict[str, Any]:
    """Read a flat YAML mapping; reference key names are translated to field names."""
    raw = yaml.safe_load(Path(path).read_text()) or {}
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: config must be a flat mapping")
    out = {}
    for key, value in raw.items():
        if isinstance(value, dict):
            raise ValueError(f"{path}: nested value for {key!r}; config must be flat")
        out[REFERENCE_KEYS.get(key, key)] = value
    return out


def dump_config_file(cfg: ModelConfig, path: str | Path) -> None:
    inverse = {v: k for k, v in REFERENCE_KEYS.items()}
    d = cfg.to_dict()
    ordered = {inverse[f]: d.pop(f) for f in REFERENCE_KEYS.values()}
    ordered.update(d)
    Path(path).write_text(yaml.safe_dump(ordered, sort_keys=False))
