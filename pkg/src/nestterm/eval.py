"""Exact-match evaluation, span-length and term-ratio sweeps, report files."""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from .corpus import AnnotatedSentence
from .model import Prediction, TermExtractor, rerank, topk_size

RATIO_AXIS = [round(0.08 + 0.01 * i, 2) for i in range(23)]
LENGTH_AXIS = list(range(1, 16))


@dataclass
class EvalReport:
    precision: float
    recall: float
    f1: float
    true_positive_count: int
    selected_count: int
    gold_count: int
    unreachable_gold_count: int = 0
    per_length: dict[int, dict[str, int]] = field(default_factory=dict)

    def row(self) -> dict:
        return {"precision": round(self.precision, 4), "recall": round(self.recall, 4),
                "f1": round(self.f1, 4), "tp": self.true_positive_count,
                "selected": self.selected_count, "gold": self.gold_count}

    def summary(self) -> str:
        return (f"P={self.precision:.4f} R={self.recall:.4f} F1={self.f1:.4f} "
                f"(tp={self.true_positive_count}, selected={self.selected_count}, gold={self.gold_count}, "
                f"unreachable={self.unreachable_gold_count})")


def f1_score(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def evaluate(predictions: Sequence[Prediction], gold: Sequence[AnnotatedSentence], *,
             selector: str = "selected", max_length: int | None = None,
             count_unreachable: bool = True) -> EvalReport:
    """Exact (sentence_id, start, end) matching against every gold span.

    ``selector`` picks which predictions count as output: ``"selected"`` (top-K
    ranker output) or ``"classifier"`` (everything with a rank score, i.e. the
    classifier's positives). Gold spans longer than ``max_length`` stay in the
    denominator unless ``count_unreachable`` is False.
    """
    if selector == "selected":
        chosen = {(p.candidate.sentence_id, p.candidate.start, p.candidate.end) for p in predictions if p.selected}
    elif selector == "classifier":
        chosen = {(p.candidate.sentence_id, p.candidate.start, p.candidate.end)
                  for p in predictions if p.rank_score is not None}
    else:
        raise ValueError(f"unknown selector {selector!r}")
    gold_set = {(sid, s, e) for sid, sent in enumerate(gold) for s, e in sent.gold_spans}
    unreachable = {g for g in gold_set if max_length is not None and g[2] - g[1] + 1 > max_length}
    if not count_unreachable:
        gold_set -= unreachable
    tp_set = chosen & gold_set
    per_length: dict[int, dict[str, int]] = {}
    for name, items in (("gold", gold_set), ("selected", chosen), ("tp", tp_set)):
        for length, count in Counter(e - s + 1 for _, s, e in items).items():
            per_length.setdefault(length, {"gold": 0, "selected": 0, "tp": 0})[name] = count
    tp = len(tp_set)
    p = tp / len(chosen) if chosen else 0.0
    r = tp / len(gold_set) if gold_set else 0.0
    return EvalReport(p, r, f1_score(p, r), tp, len(chosen), len(gold_set), len(unreachable),
                      dict(sorted(per_length.items())))


@dataclass
class SweepPoint:
    value: float
    report: EvalReport
    K: int | None = None
    classifier: EvalReport | None = None

    @property
    def true_positive_count(self) -> int:
        return self.report.true_positive_count


@dataclass
class SweepResult:
    axis: str  # max_length | term_ratio
    points: list[SweepPoint]
    mode: str = ""

    def __post_init__(self):
        vals = [p.value for p in self.points]
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise ValueError("sweep axis values must be strictly increasing")

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            if self.axis == "term_ratio":
                w.writerow(["alpha", "precision", "recall", "f1", "k_num", "true_term_num", "true_positive"])
                for pt in self.points:
                    r = pt.report
                    w.writerow([f"{pt.value:.2f}", f"{r.precision:.4f}", f"{r.recall:.4f}", f"{r.f1:.4f}",
                                pt.K, r.gold_count, r.true_positive_count])
            else:
                w.writerow(["max_length", "clf_precision", "clf_recall", "clf_f1",
                            "rank_precision", "rank_recall", "rank_f1", "k_num", "true_positive"])
                for pt in self.points:
                    c, r = pt.classifier, pt.report
                    w.writerow([int(pt.value), f"{c.precision:.4f}", f"{c.recall:.4f}", f"{c.f1:.4f}",
                                f"{r.precision:.4f}", f"{r.recall:.4f}", f"{r.f1:.4f}", pt.K,
                                r.true_positive_count])


def total_words(corpus: Sequence[AnnotatedSentence]) -> int:
    return sum(len(s) for s in corpus)


def sweep_term_ratio(predictions: Sequence[Prediction], gold: Sequence[AnnotatedSentence],
                     alphas: Sequence[float] = RATIO_AXIS) -> SweepResult:
    """Re-rank fixed scores at each alpha and evaluate."""
    words = total_words(gold)
    points = []
    for a in alphas:
        preds = rerank(predictions, words, a)
        points.append(SweepPoint(a, evaluate(preds, gold), topk_size(words, a)))
    return SweepResult("term_ratio", points)


def sweep_max_length(gold: Sequence[AnnotatedSentence], *, alpha: float,
                     predictions: Sequence[Prediction] | None = None,
                     train_fn: Callable[[int], TermExtractor] | None = None,
                     lengths: Sequence[int] = LENGTH_AXIS) -> SweepResult:
    """Classifier and ranker reports per maximum span length.

    With ``train_fn`` (k -> trained extractor) a model is trained for each k,
    as in the reference experiment. With ``predictions`` from a single model
    trained at the largest k, shorter lengths are obtained by discarding longer
    candidates before ranking; this restriction mode is an approximation.
    """
    words = total_words(gold)
    points = []
    if train_fn is not None:
        mode = "retrain"
        for k in lengths:
            preds = train_fn(k).predict(gold, alpha)
            points.append(SweepPoint(k, evaluate(preds, gold, max_length=k), topk_size(words, alpha),
                                     evaluate(preds, gold, selector="classifier", max_length=k)))
    elif predictions is not None:
        mode = "restrict (approximation)"
        model_k = max(p.candidate.length for p in predictions)
        for k in lengths:
            if k > model_k:
                break
            preds = rerank(predictions, words, alpha, max_length=k)
            points.append(SweepPoint(k, evaluate(preds, gold, max_length=k), topk_size(words, alpha),
                                     evaluate(preds, gold, selector="classifier", max_length=k)))
    else:
        raise ValueError("sweep_max_length needs either train_fn or predictions")
    return SweepResult("max_length", points, mode)


def true_positive_distribution(predictions: Sequence[Prediction], gold: Sequence[AnnotatedSentence],
                               alphas: Sequence[float] = RATIO_AXIS) -> dict[float, int]:
    """True positives per rank-ratio bin.

    The bin for alpha holds the true positives ranked in
    (K(alpha - step), K(alpha)], i.e. those added when the term ratio grows from
    the previous value to alpha; the first alpha only opens the axis.
    """
    words = total_words(gold)
    gold_set = {(sid, s, e) for sid, sent in enumerate(gold) for s, e in sent.gold_spans}
    ranked = sorted((p for p in predictions if p.rank_score is not None),
                    key=lambda p: (-p.rank_score, p.candidate))
    hits = [(p.candidate.sentence_id, p.candidate.start, p.candidate.end) in gold_set for p in ranked]
    prefix = [0]
    for h in hits:
        prefix.append(prefix[-1] + h)

    def tp_at(a):
        return prefix[min(topk_size(words, a), len(hits))]

    return {a: tp_at(a) - tp_at(prev) for prev, a in zip(alphas, alphas[1:])}
