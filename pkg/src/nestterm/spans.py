"""Bounded-length span candidates and their gold labels."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

from .corpus import AnnotatedSentence


class SpanCandidate(NamedTuple):
    sentence_id: int
    start: int
    end: int  # inclusive

    @property
    def length(self) -> int:
        return self.end - self.start + 1


def num_candidates(n: int, k: int) -> int:
    """Closed-form candidate count for a sentence of ``n`` tokens and max length ``k``."""
    k = min(k, n)
    return n * k - k * (k - 1) // 2


def enumerate_spans(sentence: AnnotatedSentence | Sequence | int, k: int,
                    sentence_id: int = 0) -> list[SpanCandidate]:
    """All spans of length <= k, ordered by (start, end)."""
    if k < 1:
        raise ValueError(f"max span length must be >= 1, got {k}")
    n = sentence if isinstance(sentence, int) else len(sentence)
    return [SpanCandidate(sentence_id, i, j) for i in range(n) for j in range(i, min(i + k, n))]


@dataclass
class CoverageReport:
    """Gold spans that no candidate can reach because they are longer than k."""

    k: int
    gold_total: int = 0
    unreachable: int = 0
    unreachable_by_length: dict | None = None

    @property
    def reachable_fraction(self) -> float:
        return 1.0 - self.unreachable / self.gold_total if self.gold_total else 1.0

    def summary(self) -> str:
        lines = [f"k={self.k}: {self.unreachable} of {self.gold_total} gold spans unreachable "
                 f"(reachable fraction {self.reachable_fraction:.4f})"]
        for length, count in sorted((self.unreachable_by_length or {}).items()):
            lines.append(f"  length {length}: {count}")
        return "\n".join(lines)


def label_candidates(candidates: Sequence[SpanCandidate], gold_spans: Iterable[tuple[int, int]],
                     k: int | None = None, report: CoverageReport | None = None):
    """Pair each candidate with ``(start, end) in gold_spans``.

    When ``report`` is given, gold spans longer than ``k`` are tallied into it.
    """
    gold = set(gold_spans)
    labeled = [(c, (c.start, c.end) in gold) for c in candidates]
    if report is not None:
        k = report.k if k is None else k
        report.gold_total += len(gold)
        if report.unreachable_by_length is None:
            report.unreachable_by_length = {}
        for s, e in gold:
            if e - s + 1 > k:
                report.unreachable += 1
                report.unreachable_by_length[e - s + 1] = report.unreachable_by_length.get(e - s + 1, 0) + 1
    return labeled


def coverage_report(corpus: Sequence[AnnotatedSentence], k: int) -> CoverageReport:
    report = CoverageReport(k)
    for sid, sent in enumerate(corpus):
        label_candidates([], sent.gold_spans, k, report)
    return report
