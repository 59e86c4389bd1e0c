"""Span classifier, ranking scorer, top-K selection and two-stage training."""

from __future__ import annotations

import copy
import hashlib
import logging
import math
import random
import warnings
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Callable, Iterable, Sequence

import torch
import torch.nn as nn

from .config import ModelConfig
from .corpus import AnnotatedSentence
from .encoder import (AuxiliaryEncoder, ConfigError, Featurizer, SentenceEncoder, Vocab,
                      build_char_vocab, build_pos_vocab, build_vocab, load_pretrained_vectors)
from .spanrepr import CandidateIndex, SpanRepresenter
from .spans import SpanCandidate, enumerate_spans

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "nestterm-checkpoint"
CHECKPOINT_VERSION = 1
PROB_EPS = 1e-7


class TrainingError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Heads and losses
# ---------------------------------------------------------------------------


def make_head(in_dim: int, hidden: int, dropout: float) -> nn.Sequential:
    """Fully connected stack producing one raw output per span."""
    return nn.Sequential(nn.Linear(in_dim, hidden), nn.ReLU(), nn.Dropout(dropout), nn.Linear(hidden, 1))


def classify(probabilities: torch.Tensor, threshold: float = 0.5):
    """Split candidates into positives (p > threshold) and negatives; returns (pos_idx, neg_idx)."""
    positive = probabilities > threshold
    return positive.nonzero().flatten(), (~positive).nonzero().flatten()


def loss_classifier(probabilities: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    p = probabilities.clamp(PROB_EPS, 1.0 - PROB_EPS)
    y = labels.to(p.dtype)
    return -(y * torch.log(p) + (1 - y) * torch.log(1 - p)).mean()


@dataclass
class RankLossCounters:
    batches: int = 0
    empty_gold: int = 0
    empty_nongold: int = 0


def loss_ranker(raw_scores: torch.Tensor, gold: torch.Tensor,
                counters: RankLossCounters | None = None) -> torch.Tensor:
    """mean(1 - sigmoid(y)) over gold spans + mean(sigmoid(y')) over the rest.

    ``raw_scores`` are the scorer's pre-sigmoid outputs for classifier-positive
    candidates. An empty group contributes 0.
    """
    gold = gold.bool()
    s = torch.sigmoid(raw_scores)
    loss = raw_scores.new_zeros(())
    if counters is not None:
        counters.batches += 1
    if gold.any():
        loss = loss + (1 - s[gold]).mean()
    elif counters is not None:
        counters.empty_gold += 1
    if (~gold).any():
        loss = loss + s[~gold].mean()
    elif counters is not None:
        counters.empty_nongold += 1
    return loss


def topk_size(total_words: int, alpha: float) -> int:
    """K = floor(alpha * total_words), with alpha taken at its decimal value."""
    if alpha <= 0:
        raise ConfigError(f"term ratio alpha must be > 0, got {alpha}")
    return math.floor(Fraction(repr(float(alpha))) * total_words)


def rank_topk(scored: Sequence[tuple[tuple[int, int, int], float]], total_words: int, alpha: float) -> list[int]:
    """Indices of the top-K entries of ``[((sentence_id, start, end), score), ...]``.

    Sorted by score descending, ties broken by position ascending.
    """
    K = topk_size(total_words, alpha)
    order = sorted(range(len(scored)), key=lambda i: (-scored[i][1], scored[i][0]))
    return order[:K]


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------


class SpanTermModel(nn.Module):
    def __init__(self, cfg: ModelConfig, num_words: int, num_chars: int, num_pos: int = 0):
        super().__init__()
        self.cfg = cfg
        self.encoder = SentenceEncoder(cfg, num_words, num_chars, num_pos)
        aux = []
        if cfg.use_pos and cfg.pos_mode == "source":
            aux.append(AuxiliaryEncoder(cfg, "pos", num_pos))
        if cfg.use_external and cfg.external_mode == "source":
            aux.append(AuxiliaryEncoder(cfg, "external"))
        self.aux_encoders = nn.ModuleList(aux)
        self.representer = SpanRepresenter(self.encoder.out_dim, cfg.max_span_length, cfg.span_length_dim,
                                           [a.out_dim for a in aux])
        hidden = self.encoder.out_dim
        self.classifier = make_head(self.representer.out_dim, hidden, cfg.dropout)
        self.scorer = make_head(self.representer.out_dim, hidden, cfg.dropout)

    def stage1_modules(self) -> list[nn.Module]:
        return [self.encoder, self.aux_encoders, self.representer, self.classifier]

    def frozen_in_stage2(self) -> list[nn.Module]:
        if self.cfg.freeze_encoder:
            return self.stage1_modules()
        return [self.classifier]

    def represent(self, batch, idx: CandidateIndex) -> torch.Tensor:
        hiddens = [self.encoder(batch)] + [a(batch) for a in self.aux_encoders]
        return self.representer(hiddens, idx)

    def classifier_probs(self, reps: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.classifier(reps).squeeze(-1))

    def scorer_raw(self, reps: torch.Tensor) -> torch.Tensor:
        return self.scorer(reps).squeeze(-1)


def parameter_digest(modules: Iterable[nn.Module]) -> str:
    h = hashlib.sha256()
    for m in modules:
        for name, p in m.state_dict().items():
            h.update(name.encode())
            h.update(p.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


@dataclass
class Prediction:
    candidate: SpanCandidate
    classifier_prob: float
    rank_score: float | None = None
    selected: bool = False

    def to_json(self) -> dict:
        c = self.candidate
        return {"sentence_id": c.sentence_id, "start": c.start, "end": c.end,
                "prob": round(self.classifier_prob, 6),
                "score": None if self.rank_score is None else round(self.rank_score, 6),
                "selected": self.selected}


def rerank(predictions: Sequence[Prediction], total_words: int, alpha: float,
           max_length: int | None = None) -> list[Prediction]:
    """Re-run top-K selection on fixed scores; optionally drop candidates longer than ``max_length``."""
    preds = [p for p in predictions if max_length is None or p.candidate.length <= max_length]
    pos = [i for i, p in enumerate(preds) if p.rank_score is not None]
    chosen = rank_topk([((preds[i].candidate.sentence_id, preds[i].candidate.start, preds[i].candidate.end),
                         preds[i].rank_score) for i in pos], total_words, alpha)
    selected = {pos[j] for j in chosen}
    return [replace(p, selected=i in selected) for i, p in enumerate(preds)]


def _batches(items: Sequence, size: int) -> Iterable[Sequence]:
    for i in range(0, len(items), size):
        yield items[i:i + size]


@dataclass
class TrainResult:
    extractor: "TermExtractor"
    history: dict = field(default_factory=dict)


class TermExtractor:
    """A model together with the vocabularies and config needed to apply it."""

    def __init__(self, cfg: ModelConfig, words: Vocab, chars: Vocab, pos: Vocab | None = None,
                 model: SpanTermModel | None = None):
        self.cfg = cfg
        self.words, self.chars, self.pos = words, chars, pos
        self.featurizer = Featurizer(words, chars, pos if cfg.use_pos else None, cfg.lowercase_words,
                                     cfg.external_dim if cfg.use_external else 0)
        self.model = model or SpanTermModel(cfg, len(words), len(chars), len(pos) if pos else 0)
        self.history: dict = {}

    @classmethod
    def from_corpus(cls, cfg: ModelConfig, train_corpus: Sequence[AnnotatedSentence]) -> "TermExtractor":
        torch.manual_seed(cfg.seed)
        words = build_vocab(train_corpus, cfg.min_count, cfg.lowercase_words)
        chars = build_char_vocab(train_corpus)
        pos = build_pos_vocab(train_corpus) if cfg.use_pos else None
        ext = cls(cfg, words, chars, pos)
        if "pretrained" in cfg.features:
            if not cfg.pretrained_path:
                raise ConfigError("'pretrained' feature source requires pretrained_path")
            table, coverage = load_pretrained_vectors(cfg.pretrained_path, words, cfg.word_embedding_dim,
                                                      lowercase=cfg.lowercase_words)
            with torch.no_grad():
                ext.model.encoder.word_emb.weight.copy_(table)
            ext.history["pretrained_coverage"] = coverage
        return ext

    # -- candidate preparation -------------------------------------------------

    def prepare(self, sentences: Sequence[AnnotatedSentence], k: int | None = None):
        k = k or self.cfg.max_span_length
        cands = [c for b, s in enumerate(sentences) for c in enumerate_spans(s, k, b)]
        labels = torch.tensor([(c.start, c.end) in sentences[c.sentence_id].gold_spans for c in cands])
        batch = self.featurizer(sentences)
        if next(self.model.parameters()).dtype == torch.float64 and batch.external is not None:
            batch.external = batch.external.double()
        return batch, CandidateIndex.from_candidates(cands), labels, cands

    def representations(self, sentences: Sequence[AnnotatedSentence]):
        batch, idx, labels, cands = self.prepare(sentences)
        return self.model.represent(batch, idx), labels, cands

    # -- inference ---------------------------------------------------------------

    @torch.no_grad()
    def predict(self, sentences: Sequence[AnnotatedSentence], alpha: float | None = None,
                batch_size: int | None = None) -> list[Prediction]:
        """Candidates of every sentence with probabilities, scores and top-K flags.

        Sentences longer than ``max_sentence_length`` are skipped with a warning.
        """
        alpha = self.cfg.term_ratio if alpha is None else alpha
        topk_size(1, alpha)  # validates alpha
        self.model.eval()
        preds: list[Prediction] = []
        kept = []
        for sid, s in enumerate(sentences):
            if len(s) > self.cfg.max_sentence_length:
                warnings.warn(f"sentence {sid}: {len(s)} tokens exceeds cap {self.cfg.max_sentence_length}; skipped",
                              stacklevel=2)
            elif len(s) == 0:
                warnings.warn(f"sentence {sid} is empty; skipped", stacklevel=2)
            else:
                kept.append(sid)
        for chunk in _batches(kept, batch_size or self.cfg.batch_size):
            reps, _, cands = self.representations([sentences[i] for i in chunk])
            probs = self.model.classifier_probs(reps)
            pos_idx, _ = classify(probs, self.cfg.classifier_threshold)
            scores = torch.full_like(probs, float("nan"))
            if len(pos_idx):
                scores[pos_idx] = torch.sigmoid(self.model.scorer_raw(reps[pos_idx]))
            for c, p, sc in zip(cands, probs.tolist(), scores.tolist()):
                cand = SpanCandidate(chunk[c.sentence_id], c.start, c.end)
                preds.append(Prediction(cand, p, None if math.isnan(sc) else sc))
        total_words = sum(len(sentences[i]) for i in kept)
        return rerank(preds, total_words, alpha)

    # -- checkpoints ---------------------------------------------------------------

    def save(self, path: str | Path) -> None:
        torch.save({
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "config": self.cfg.to_dict(),
            "vocab": {"words": self.words.to_list(), "chars": self.chars.to_list(),
                      "pos": self.pos.to_list() if self.pos else None},
            "state_dict": self.model.state_dict(),
            "history": self.history,
        }, path)

    @classmethod
    def load(cls, path: str | Path) -> "TermExtractor":
        ckpt = torch.load(path, map_location="cpu", weights_only=True)
        if ckpt.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path}: not a nestterm checkpoint")
        if ckpt.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {ckpt.get('version')}")
        cfg = ModelConfig.from_dict(ckpt["config"])
        v = ckpt["vocab"]
        ext = cls(cfg, Vocab.from_list(v["words"]), Vocab.from_list(v["chars"]),
                  Vocab.from_list(v["pos"]) if v["pos"] else None)
        ext.model.load_state_dict(ckpt["state_dict"])
        ext.history = ckpt.get("history", {})
        ext.model.eval()
        return ext


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def _check_finite(loss: torch.Tensor, stage: str, epoch: int):
    if not torch.isfinite(loss):
        raise TrainingError(f"{stage}: loss became {loss.item()} in epoch {epoch}; "
                            "lower the learning rate or check the input data")


@torch.no_grad()
def _eval_stage1(ext: TermExtractor, dev: Sequence[AnnotatedSentence]) -> dict:
    ext.model.eval()
    total_loss, n_cand, tp, sel = 0.0, 0, 0, 0
    for chunk in _batches(dev, ext.cfg.batch_size):
        reps, labels, _ = ext.representations(chunk)
        probs = ext.model.classifier_probs(reps)
        total_loss += loss_classifier(probs, labels).item() * len(labels)
        n_cand += len(labels)
        positive = probs > ext.cfg.classifier_threshold
        tp += int((positive & labels).sum())
        sel += int(positive.sum())
    gold = sum(len(s.gold_spans) for s in dev)
    if not ext.cfg.count_unreachable:
        gold = sum(1 for s in dev for a, b in s.gold_spans if b - a + 1 <= ext.cfg.max_span_length)
    return {"dev_loss": total_loss / max(n_cand, 1),
            "dev_precision": tp / sel if sel else 0.0,
            "dev_recall": tp / gold if gold else 0.0}


@torch.no_grad()
def _positive_reps(ext: TermExtractor, sentences: Sequence[AnnotatedSentence]):
    """Frozen-model representations and gold flags of classifier-positive candidates, per batch."""
    ext.model.eval()
    out = []
    for chunk in _batches(sentences, ext.cfg.batch_size):
        reps, labels, _ = ext.representations(chunk)
        pos_idx, _ = classify(ext.model.classifier_probs(reps), ext.cfg.classifier_threshold)
        out.append((reps[pos_idx], labels[pos_idx]))
    return out


@torch.no_grad()
def _ranking_loss_over(ext: TermExtractor, groups) -> tuple[float, int]:
    """Corpus-level ranking loss of the scorer (infer mode) and number of positives."""
    ext.model.scorer.eval()
    raws, golds = [], []
    for reps, gold in groups:
        if len(reps):
            raws.append(ext.model.scorer_raw(reps))
            golds.append(gold)
    if not raws:
        return float("nan"), 0
    raw = torch.cat(raws)
    return loss_ranker(raw, torch.cat(golds)).item(), len(raw)


def train(train_set: Sequence[AnnotatedSentence], dev_set: Sequence[AnnotatedSentence],
          cfg: ModelConfig, extractor: TermExtractor | None = None,
          on_epoch: Callable[[str, dict], None] | None = None) -> TrainResult:
    """Two-stage optimisation: encoder + classifier first, then the ranking scorer with stage 1 frozen.

    ``on_epoch(stage, record)`` is called after every epoch; returning True ends that stage.
    """
    if not train_set or not dev_set:
        raise TrainingError("training needs non-empty train and dev sets")
    torch.manual_seed(cfg.seed)
    rng = random.Random(cfg.seed)
    ext = extractor or TermExtractor.from_corpus(cfg, train_set)
    model = ext.model
    hist: dict = {"stage1": [], "stage2": []}
    hist.update(ext.history)

    # stage 1
    params1 = [p for m in model.stage1_modules() for p in m.parameters()]
    opt1 = torch.optim.Adam(params1, lr=cfg.learning_rate)
    best_loss, best_recall = math.inf, -1.0
    best_loss_state = best_recall_state = None
    patience = 0
    order = list(range(len(train_set)))
    for epoch in range(1, cfg.max_epochs + 1):
        model.train()
        rng.shuffle(order)
        ep_loss, ep_n = 0.0, 0
        for chunk in _batches(order, cfg.batch_size):
            reps, labels, _ = ext.representations([train_set[i] for i in chunk])
            loss = loss_classifier(model.classifier_probs(reps), labels)
            _check_finite(loss, "stage 1", epoch)
            opt1.zero_grad()
            loss.backward()
            if cfg.grad_clip:
                nn.utils.clip_grad_norm_(params1, cfg.grad_clip)
            opt1.step()
            ep_loss += loss.item() * len(labels)
            ep_n += len(labels)
        rec = {"epoch": epoch, "train_loss": ep_loss / max(ep_n, 1), **_eval_stage1(ext, dev_set)}
        _check_finite(torch.tensor(rec["dev_loss"]), "stage 1 (dev)", epoch)
        hist["stage1"].append(rec)
        stop = bool(on_epoch and on_epoch("stage1", rec))
        log.info("stage1 epoch %d: %s", epoch, rec)
        if rec["dev_recall"] > best_recall or (rec["dev_recall"] == best_recall and rec["dev_loss"] < best_loss):
            best_recall = rec["dev_recall"]
            best_recall_state = copy.deepcopy(model.state_dict())
            hist["best_recall_epoch"] = epoch
        if rec["dev_loss"] < best_loss:
            best_loss = rec["dev_loss"]
            best_loss_state = copy.deepcopy(model.state_dict())
            hist["best_loss_epoch"] = epoch
            patience = 0
        else:
            patience += 1
            if patience >= cfg.early_stop:
                break
        if stop:
            break
    model.load_state_dict(best_recall_state if cfg.selection == "recall" else best_loss_state)

    # stage 2
    frozen = model.frozen_in_stage2()
    for m in frozen:
        for p in m.parameters():
            p.requires_grad_(False)
    digest = parameter_digest(frozen)
    params2 = [p for p in model.parameters() if p.requires_grad]
    opt2 = torch.optim.Adam(params2, lr=cfg.learning_rate)
    cache = _positive_reps(ext, dev_set)
    dev_groups = cache
    if sum(len(r) for r, _ in dev_groups) == 0:
        raise TrainingError("classifier marks no dev candidate positive; train stage 1 longer")
    train_cache = None
    if cfg.freeze_encoder:
        train_cache = _positive_reps(ext, [train_set[i] for i in range(len(train_set))])
    counters = RankLossCounters()
    best2, best2_state, patience = math.inf, None, 0
    for epoch in range(1, cfg.stage2_max_epochs + 1):
        rng.shuffle(order)
        ep_loss, ep_batches = 0.0, 0
        if train_cache is not None:
            batch_iter = [train_cache[j] for j in rng.sample(range(len(train_cache)), len(train_cache))]
        else:
            batch_iter = (_stage2_batch(ext, [train_set[i] for i in chunk])
                          for chunk in _batches(order, cfg.batch_size))
        for reps, gold in batch_iter:
            if not len(reps):
                counters.batches += 1
                counters.empty_gold += 1
                counters.empty_nongold += 1
                continue
            model.scorer.train()
            loss = loss_ranker(model.scorer_raw(reps), gold, counters)
            _check_finite(loss, "stage 2", epoch)
            opt2.zero_grad()
            loss.backward()
            opt2.step()
            ep_loss += loss.item()
            ep_batches += 1
        if not cfg.freeze_encoder:
            dev_groups = _positive_reps(ext, dev_set)
        dev_loss, _ = _ranking_loss_over(ext, dev_groups)
        rec = {"epoch": epoch, "train_loss": ep_loss / max(ep_batches, 1), "dev_loss": dev_loss}
        if train_cache is not None:
            rec["train_eval_loss"] = _ranking_loss_over(ext, train_cache)[0]
        hist["stage2"].append(rec)
        stop = bool(on_epoch and on_epoch("stage2", rec))
        log.info("stage2 epoch %d: %s", epoch, rec)
        if dev_loss < best2:
            best2, best2_state, patience = dev_loss, copy.deepcopy(model.scorer.state_dict()), 0
        else:
            patience += 1
            if patience >= cfg.early_stop:
                break
        if stop:
            break
    if best2_state is not None:
        model.scorer.load_state_dict(best2_state)
    for m in frozen:
        for p in m.parameters():
            p.requires_grad_(True)
    hist["stage1_digest"] = digest
    hist["stage1_digest_after"] = parameter_digest(frozen)
    hist["rank_loss_counters"] = vars(counters).copy()
    model.eval()
    ext.history = hist
    return TrainResult(ext, hist)


def _stage2_batch(ext: TermExtractor, sentences):
    """Stage-2 inputs when the encoder keeps training: representations with gradients."""
    ext.model.train()
    ext.model.classifier.eval()
    reps, labels, _ = ext.representations(sentences)
    with torch.no_grad():
        pos_idx, _ = classify(ext.model.classifier_probs(reps), ext.cfg.classifier_threshold)
    return reps[pos_idx], labels[pos_idx]
