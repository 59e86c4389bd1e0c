"""Sentence encoder: char CNN + word embeddings -> BiLSTM -> terminology attention."""

from __future__ import annotations

import logging
import warnings
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence

from .config import ModelConfig
from .corpus import AnnotatedSentence

log = logging.getLogger(__name__)

PAD = "<pad>"
UNK = "<unk>"


class ConfigError(ValueError):
    pass


class Vocab:
    """Token <-> index map. Index 0 is padding, index 1 the OOV entry."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.itos = [PAD, UNK]
        self.stoi = {PAD: 0, UNK: 1}
        for tok in tokens:
            if tok not in self.stoi:
                self.stoi[tok] = len(self.itos)
                self.itos.append(tok)

    def __len__(self):
        return len(self.itos)

    def __contains__(self, tok):
        return tok in self.stoi

    def __getitem__(self, tok: str) -> int:
        return self.stoi.get(tok, 1)

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.stoi.get(t, 1) for t in tokens]

    def to_list(self) -> list[str]:
        return list(self.itos)

    @classmethod
    def from_list(cls, itos: Sequence[str]) -> "Vocab":
        if list(itos[:2]) != [PAD, UNK]:
            raise ValueError("vocabulary must start with the padding and OOV entries")
        return cls(itos[2:])


def _ranked(counts: Counter, min_count: int) -> list[str]:
    # frequency descending, then lexicographic: independent of corpus order
    return [t for t, c in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])) if c >= min_count]


def build_vocab(train_corpus: Sequence[AnnotatedSentence], min_count: int = 1,
                lowercase: bool = False) -> Vocab:
    if not train_corpus:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    counts = Counter(t.lower() if lowercase else t for s in train_corpus for t in s.tokens)
    return Vocab(_ranked(counts, min_count))


def build_char_vocab(train_corpus: Sequence[AnnotatedSentence]) -> Vocab:
    return Vocab(_ranked(Counter(ch for s in train_corpus for t in s.tokens for ch in t), 1))


def build_pos_vocab(train_corpus: Sequence[AnnotatedSentence]) -> Vocab:
    return Vocab(_ranked(Counter(p for s in train_corpus for p in (s.pos_tags or ())), 1))


def load_pretrained_vectors(path: str | Path, vocab: Vocab, dim: int,
                            generator: torch.Generator | None = None,
                            lowercase: bool = False) -> tuple[torch.Tensor, float]:
    """Embedding table initialised from a ``word f1 f2 ...`` text file.

    Rows without a vector stay randomly initialised. Returns the table and the
    fraction of (non-special) vocabulary entries found in the file.
    """
    table = torch.empty(len(vocab), dim)
    nn.init.normal_(table, std=dim ** -0.5, generator=generator)
    table[0] = 0.0
    found = set()
    file_dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip().split(" ")
            if len(parts) < 2:
                continue
            word, values = parts[0], parts[1:]
            if file_dim is None:
                file_dim = len(values)
                if file_dim != dim:
                    raise ConfigError(f"{path}: vectors have dimension {file_dim}, "
                                      f"word embedding dimension is {dim}")
            elif len(values) != file_dim:
                raise ConfigError(f"{path}:{lineno}: expected {file_dim} values, got {len(values)}")
            if lowercase:
                word = word.lower()
            idx = vocab.stoi.get(word)
            if idx is not None and idx > 1 and idx not in found:
                table[idx] = torch.tensor([float(v) for v in values])
                found.add(idx)
    coverage = len(found) / max(len(vocab) - 2, 1)
    if not found:
        warnings.warn(f"{path}: no vocabulary entry has a pretrained vector", stacklevel=2)
    log.info("pretrained vectors cover %.2f%% of the vocabulary", 100 * coverage)
    return table, coverage


@dataclass
class SentenceBatch:
    """Padded tensors for a list of sentences."""

    word_ids: torch.Tensor  # B x n
    char_ids: torch.Tensor  # B x n x L
    lengths: torch.Tensor  # B
    mask: torch.Tensor  # B x n, bool
    pos_ids: torch.Tensor | None = None
    external: torch.Tensor | None = None  # B x n x e


class Featurizer:
    """Maps sentences to index tensors using fixed vocabularies."""

    def __init__(self, words: Vocab, chars: Vocab, pos: Vocab | None = None,
                 lowercase: bool = False, external_dim: int = 0):
        self.words = words
        self.chars = chars
        self.pos = pos
        self.lowercase = lowercase
        self.external_dim = external_dim

    def __call__(self, sentences: Sequence[AnnotatedSentence]) -> SentenceBatch:
        B = len(sentences)
        n = max(len(s) for s in sentences)
        L = max(len(t) for s in sentences for t in s.tokens)
        word_ids = torch.zeros(B, n, dtype=torch.long)
        char_ids = torch.zeros(B, n, L, dtype=torch.long)
        pos_ids = torch.zeros(B, n, dtype=torch.long) if self.pos is not None else None
        external = torch.zeros(B, n, self.external_dim) if self.external_dim else None
        for b, s in enumerate(sentences):
            toks = [t.lower() for t in s.tokens] if self.lowercase else s.tokens
            word_ids[b, :len(s)] = torch.tensor(self.words.encode(toks))
            for i, tok in enumerate(s.tokens):
                char_ids[b, i, :len(tok)] = torch.tensor(self.chars.encode(tok))
            if pos_ids is not None:
                if s.pos_tags is None:
                    raise ConfigError("POS features enabled but a sentence has no POS tags")
                pos_ids[b, :len(s)] = torch.tensor(self.pos.encode(s.pos_tags))
            if external is not None:
                if s.external_vectors is None:
                    raise ConfigError("external features enabled but a sentence has no vectors")
                vec = torch.tensor(s.external_vectors, dtype=torch.float32)
                if vec.shape[1] != self.external_dim:
                    raise ConfigError(f"external vectors have dimension {vec.shape[1]}, "
                                      f"configured {self.external_dim}")
                external[b, :len(s)] = vec
        lengths = torch.tensor([len(s) for s in sentences])
        mask = torch.arange(n)[None, :] < lengths[:, None]
        return SentenceBatch(word_ids, char_ids, lengths, mask, pos_ids, external)


def masked_softmax(scores: torch.Tensor, mask: torch.Tensor, dim: int = -1) -> torch.Tensor:
    scores = scores.masked_fill(~mask, float("-inf"))
    return torch.softmax(scores, dim=dim).masked_fill(~mask, 0.0)


def terminology_attention(H: torch.Tensor, target: torch.Tensor, mask: torch.Tensor | None = None):
    """Softmax over token scores ``h_i . v``; returns (weights, H * weights)."""
    scores = H @ target
    if mask is None:
        p = torch.softmax(scores, dim=-1)
    else:
        p = masked_softmax(scores, mask)
    return p, H * p.unsqueeze(-1)


def _uniform_target(dim: int) -> nn.Parameter:
    return nn.Parameter(torch.empty(dim).uniform_(-0.1, 0.1))


class CharCNN(nn.Module):
    def __init__(self, num_chars: int, emb_dim: int, filters: int, window: int):
        super().__init__()
        self.emb = nn.Embedding(num_chars, emb_dim, padding_idx=0)
        self.conv = nn.Conv1d(emb_dim, filters, window, padding=window // 2)

    def forward(self, char_ids: torch.Tensor) -> torch.Tensor:
        B, n, L = char_ids.shape
        cmask = (char_ids.view(B * n, L) != 0).unsqueeze(1)
        # padded characters enter the convolution as exact zeros
        x = self.emb(char_ids.view(B * n, L)).transpose(1, 2) * cmask
        y = self.conv(x)[:, :, :L]
        # padding positions (and empty pad tokens) never win the max
        y = y.masked_fill(~cmask, float("-inf")).max(dim=2).values
        y = torch.where(torch.isfinite(y), y, torch.zeros_like(y))
        return y.view(B, n, -1)


@dataclass
class SentenceHiddens:
    H: torch.Tensor  # B x n x d
    H_s: torch.Tensor  # B x n x d
    attention_weights: torch.Tensor  # B x n
    mask: torch.Tensor  # B x n


class _AttendedLSTM(nn.Module):
    def __init__(self, input_dim: int, hidden: int, layers: int, bidirectional: bool, dropout: float):
        super().__init__()
        self.lstm = nn.LSTM(input_dim, hidden, num_layers=layers, batch_first=True,
                            bidirectional=bidirectional, dropout=dropout if layers > 1 else 0.0)
        self.out_dim = hidden * (2 if bidirectional else 1)
        self.dropout = nn.Dropout(dropout)
        self.target = _uniform_target(self.out_dim)

    def forward(self, x: torch.Tensor, lengths: torch.Tensor, mask: torch.Tensor) -> SentenceHiddens:
        packed = pack_padded_sequence(x, lengths.cpu(), batch_first=True, enforce_sorted=False)
        out, _ = self.lstm(packed)
        H, _ = pad_packed_sequence(out, batch_first=True, total_length=x.shape[1])
        H = self.dropout(H)
        p, H_s = terminology_attention(H, self.target, mask)
        return SentenceHiddens(H, H_s, p, mask)


class SentenceEncoder(nn.Module):
    """Base source: char CNN features + word (+POS / external when concatenated) -> BiLSTM."""

    def __init__(self, cfg: ModelConfig, num_words: int, num_chars: int, num_pos: int = 0):
        super().__init__()
        self.cfg = cfg
        self.word_emb = nn.Embedding(num_words, cfg.word_embedding_dim, padding_idx=0)
        self.char_cnn = CharCNN(num_chars, cfg.char_embedding_dim, cfg.char_cnn_filters, cfg.char_cnn_window)
        in_dim = cfg.word_embedding_dim + cfg.char_cnn_filters
        self.pos_emb = None
        if cfg.use_pos and cfg.pos_mode == "concat":
            self.pos_emb = nn.Embedding(num_pos, cfg.pos_embedding_dim, padding_idx=0)
            in_dim += cfg.pos_embedding_dim
        self.concat_external = cfg.use_external and cfg.external_mode == "concat"
        if self.concat_external:
            in_dim += cfg.external_dim
        self.in_dropout = nn.Dropout(cfg.dropout)
        self.rnn = _AttendedLSTM(in_dim, cfg.word_lstm_hidden, cfg.word_lstm_layers,
                                 cfg.bidirectional, cfg.dropout)
        self.out_dim = self.rnn.out_dim

    def forward(self, batch: SentenceBatch) -> SentenceHiddens:
        parts = [self.word_emb(batch.word_ids), self.char_cnn(batch.char_ids)]
        if self.pos_emb is not None:
            parts.append(self.pos_emb(batch.pos_ids))
        if self.concat_external:
            parts.append(batch.external)
        x = self.in_dropout(torch.cat(parts, dim=-1))
        return self.rnn(x, batch.lengths, batch.mask)


class AuxiliaryEncoder(nn.Module):
    """A separately attended recurrent pipeline for one extra feature source."""

    def __init__(self, cfg: ModelConfig, kind: str, num_pos: int = 0):
        super().__init__()
        self.kind = kind
        if kind == "pos":
            self.emb = nn.Embedding(num_pos, cfg.pos_embedding_dim, padding_idx=0)
            in_dim, hidden, layers = cfg.pos_embedding_dim, cfg.pos_lstm_hidden, cfg.pos_lstm_layers
        elif kind == "external":
            self.emb = None
            in_dim, hidden, layers = cfg.external_dim, cfg.external_lstm_hidden, 1
        else:
            raise ConfigError(f"unknown auxiliary source {kind!r}")
        self.in_dropout = nn.Dropout(cfg.dropout)
        self.rnn = _AttendedLSTM(in_dim, hidden, layers, cfg.bidirectional, cfg.dropout)
        self.out_dim = self.rnn.out_dim

    def forward(self, batch: SentenceBatch) -> SentenceHiddens:
        x = self.emb(batch.pos_ids) if self.kind == "pos" else batch.external
        return self.rnn(self.in_dropout(x), batch.lengths, batch.mask)


def encode(encoder: nn.Module, batch: SentenceBatch, mode: str = "infer") -> SentenceHiddens:
    """Run ``encoder`` in train (dropout on) or infer mode."""
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    was_training = encoder.training
    encoder.train(mode == "train")
    try:
        if mode == "infer":
            with torch.no_grad():
                return encoder(batch)
        return encoder(batch)
    finally:
        encoder.train(was_training)
