"""Corpus ingestion: nested term annotations, plain JSONL records, statistics, splits."""

from __future__ import annotations

import csv
import io
import json
import math
import random
import warnings
import xml.etree.ElementTree as ET
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

__all__ = [
    "AnnotatedSentence",
    "AnnotationParseError",
    "CorpusError",
    "CorpusStats",
    "CorpusWarning",
    "SplitSpec",
    "compute_stats",
    "load_genia",
    "load_plain_format",
    "parse_nested_annotations",
    "split_corpus",
    "write_plain_format",
    "write_stats_csv",
]


class CorpusError(ValueError):
    """Invalid corpus content (bad indices, unusable split, ...)."""


class CorpusWarning(UserWarning):
    pass


class AnnotationParseError(CorpusError):
    """Malformed nested-annotation markup."""

    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


@dataclass(frozen=True)
class AnnotatedSentence:
    """A pre-segmented sentence with (possibly nested) inclusive gold spans."""

    tokens: tuple[str, ...]
    gold_spans: frozenset[tuple[int, int]] = frozenset()
    pos_tags: tuple[str, ...] | None = None
    external_vectors: tuple[tuple[float, ...], ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "gold_spans", frozenset((int(s), int(e)) for s, e in self.gold_spans))
        if self.pos_tags is not None:
            object.__setattr__(self, "pos_tags", tuple(self.pos_tags))
        if self.external_vectors is not None:
            object.__setattr__(
                self, "external_vectors", tuple(tuple(float(x) for x in v) for v in self.external_vectors)
            )
        n = len(self.tokens)
        for s, e in self.gold_spans:
            if s > e:
                raise CorpusError(f"span [{s},{e}]: start exceeds end")
            if s < 0 or e >= n:
                raise CorpusError(f"span [{s},{e}] out of range for {n} tokens")
        if self.pos_tags is not None and len(self.pos_tags) != n:
            raise CorpusError(f"{len(self.pos_tags)} POS tags for {n} tokens")
        if self.external_vectors is not None and len(self.external_vectors) != n:
            raise CorpusError(f"{len(self.external_vectors)} external vectors for {n} tokens")

    def __len__(self) -> int:
        return len(self.tokens)

    def sorted_spans(self) -> list[tuple[int, int]]:
        return sorted(self.gold_spans)


# ---------------------------------------------------------------------------
# GENIA-style inline markup
# ---------------------------------------------------------------------------


def _local(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


class _SentenceBuilder:
    def __init__(self):
        self.tokens: list[str] = []
        self.spans: set[tuple[int, int]] = set()

    def add_text(self, text: str | None):
        # element edges always separate tokens, so each text node splits on its own
        if text:
            self.tokens.extend(text.split())


def _walk(elem, builder: _SentenceBuilder | None, sentences: list, open_cons: int,
          cons_tag: str, sentence_tag: str) -> bool:
    """Depth-first traversal. Returns True if a sentence boundary was crossed inside ``elem``."""
    crossed = False
    tag = _local(elem.tag)
    if tag == sentence_tag:
        if open_cons:
            crossed = True
        sb = _SentenceBuilder()
        sb.add_text(elem.text)
        for child in elem:
            _walk(child, sb, sentences, 0, cons_tag, sentence_tag)
            sb.add_text(child.tail)
        sentences.append(AnnotatedSentence(sb.tokens, sb.spans))
        return crossed

    if tag == cons_tag and builder is not None:
        start = len(builder.tokens)
        builder.add_text(elem.text)
        for child in elem:
            if _walk(child, builder, sentences, open_cons + 1, cons_tag, sentence_tag):
                crossed = True
            builder.add_text(child.tail)
        end = len(builder.tokens) - 1
        if crossed:
            warnings.warn(f"constituent {elem.attrib.get('lex', '?')!r} crosses a sentence boundary; dropped",
                          CorpusWarning, stacklevel=2)
        elif end >= start:
            builder.spans.add((start, end))
        return crossed

    # any other element: inline markup inside a sentence, or structure outside sentences
    if builder is not None:
        builder.add_text(elem.text)
    for child in elem:
        child_cross = _walk(child, builder, sentences,
                            open_cons + (1 if tag == cons_tag else 0), cons_tag, sentence_tag)
        crossed = crossed or child_cross
        if tag == cons_tag and child_cross:
            warnings.warn("constituent outside any sentence spans sentence content; dropped",
                          CorpusWarning, stacklevel=2)
        if builder is not None:
            builder.add_text(child.tail)
    return crossed


def parse_nested_annotations(document: str | bytes, *, cons_tag: str = "cons",
                             sentence_tag: str = "sentence") -> list[AnnotatedSentence]:
    """Parse GENIA-style XML with nested ``<cons>`` term markup into sentences.

    Tokens are whitespace-separated words; element edges also split tokens.
    Every ``<cons>`` becomes one inclusive (start, end) span of its sentence.
    Identical extents (e.g. a constituent wrapping exactly one other) collapse
    into one gold span.
    """
    try:
        root = ET.fromstring(document)
    except ET.ParseError as exc:
        line, column = exc.position
        raise AnnotationParseError(str(exc).split(":")[0], line, column) from None
    sentences: list[AnnotatedSentence] = []
    _walk(root, None, sentences, 0, cons_tag, sentence_tag)
    return sentences


def load_genia(path: str | Path) -> list[AnnotatedSentence]:
    return parse_nested_annotations(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# Plain line-delimited format
# ---------------------------------------------------------------------------


def _record_to_sentence(rec: dict, recno: int) -> AnnotatedSentence:
    try:
        tokens = rec["tokens"]
        raw_spans = rec.get("spans", [])
    except (KeyError, TypeError):
        raise CorpusError(f"record {recno}: expected an object with 'tokens' and 'spans'") from None
    spans = []
    for sp in raw_spans:
        if len(sp) != 2:
            raise CorpusError(f"record {recno}: span {sp!r} is not a [start, end] pair")
        s, e = int(sp[0]), int(sp[1])
        if s > e:
            raise CorpusError(f"record {recno}: span [{s},{e}]: start exceeds end")
        if s < 0 or e >= len(tokens):
            raise CorpusError(f"record {recno}: span [{s},{e}] out of range for {len(tokens)} tokens")
        spans.append((s, e))
    if len(set(spans)) != len(spans):
        warnings.warn(f"record {recno}: duplicate spans removed", CorpusWarning, stacklevel=3)
    try:
        return AnnotatedSentence(tokens, frozenset(spans), rec.get("pos"), rec.get("vectors"))
    except CorpusError as exc:
        raise CorpusError(f"record {recno}: {exc}") from None


def load_plain_format(path: str | Path) -> list[AnnotatedSentence]:
    """Read JSONL records ``{"tokens": [...], "spans": [[s, e], ...], "pos": [...]}``."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for recno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"record {recno}: invalid JSON ({exc.msg})") from None
            out.append(_record_to_sentence(rec, recno))
    return out


def write_plain_format(corpus: Iterable[AnnotatedSentence], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for sent in corpus:
            rec = {"tokens": list(sent.tokens), "spans": [list(sp) for sp in sent.sorted_spans()]}
            if sent.pos_tags is not None:
                rec["pos"] = list(sent.pos_tags)
            if sent.external_vectors is not None:
                rec["vectors"] = [list(v) for v in sent.external_vectors]
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def load_corpus(path: str | Path) -> list[AnnotatedSentence]:
    """Dispatch on extension: ``.xml`` is GENIA markup, anything else JSONL."""
    path = Path(path)
    if path.suffix.lower() == ".xml":
        return load_genia(path)
    return load_plain_format(path)


# ---------------------------------------------------------------------------
# Statistics
# ---------------------------------------------------------------------------


@dataclass
class CorpusStats:
    num_sentences: int
    num_words: int
    num_terms: int
    num_nested_terms: int
    num_independent_terms: int
    max_term_length: int
    length_histogram: dict[int, int] = field(default_factory=dict)

    @property
    def term_ratio(self) -> float:
        return self.num_terms / self.num_words if self.num_words else 0.0

    def cumulative_share(self, max_length: int) -> float:
        """Fraction of terms whose length is at most ``max_length``."""
        if not self.num_terms:
            return 0.0
        return sum(c for n, c in self.length_histogram.items() if n <= max_length) / self.num_terms

    def summary(self) -> str:
        return "\n".join([
            f"sentences: {self.num_sentences}",
            f"words: {self.num_words}",
            f"terms: {self.num_terms}",
            f"nested terms: {self.num_nested_terms}",
            f"independent terms: {self.num_independent_terms}",
            f"max term length: {self.max_term_length}",
            f"term ratio: {self.term_ratio:.4f}",
            f"share of terms with length 1-5: {self.cumulative_share(5):.4f}",
        ])


def _nested_flags(spans: Sequence[tuple[int, int]]) -> list[bool]:
    # sweep over spans sorted by start; a span is nested iff it shares a token with another span
    order = sorted(range(len(spans)), key=lambda i: spans[i])
    flags = [False] * len(spans)
    reach_idx = None  # index of span with the largest end seen so far
    for i in order:
        s, e = spans[i]
        if reach_idx is not None and spans[reach_idx][1] >= s:
            flags[i] = True
            flags[reach_idx] = True
        if reach_idx is None or e > spans[reach_idx][1]:
            reach_idx = i
    return flags


def compute_stats(corpus: Sequence[AnnotatedSentence]) -> CorpusStats:
    if not corpus:
        raise CorpusError("cannot compute statistics of an empty corpus")
    hist: Counter[int] = Counter()
    nested = 0
    words = 0
    for sent in corpus:
        words += len(sent.tokens)
        spans = list(sent.gold_spans)
        hist.update(e - s + 1 for s, e in spans)
        nested += sum(_nested_flags(spans))
    terms = sum(hist.values())
    return CorpusStats(
        num_sentences=len(corpus),
        num_words=words,
        num_terms=terms,
        num_nested_terms=nested,
        num_independent_terms=terms - nested,
        max_term_length=max(hist, default=0),
        length_histogram=dict(sorted(hist.items())),
    )


def write_stats_csv(stats: CorpusStats, path: str | Path) -> None:
    """Length distribution (length,count,percentage) followed by a summary block."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["length", "count", "percentage"])
    for length, count in stats.length_histogram.items():
        w.writerow([length, count, f"{100.0 * count / stats.num_terms:.4f}"])
    w.writerow([])
    for key, value in [
        ("num_sentences", stats.num_sentences),
        ("num_words", stats.num_words),
        ("num_terms", stats.num_terms),
        ("num_nested_terms", stats.num_nested_terms),
        ("num_independent_terms", stats.num_independent_terms),
        ("max_term_length", stats.max_term_length),
        ("term_ratio", f"{stats.term_ratio:.6f}"),
    ]:
        w.writerow([f"# {key}", value])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.9
    dev_fraction: float = 0.05
    test_fraction: float = 0.05
    shuffle_seed: int = 626

    def __post_init__(self):
        fracs = (self.train_fraction, self.dev_fraction, self.test_fraction)
        if any(f < 0 for f in fracs):
            raise CorpusError("split fractions must be non-negative")
        if abs(sum(fracs) - 1.0) > 1e-9:
            raise CorpusError(f"split fractions sum to {sum(fracs)}, expected 1.0")

    def sizes(self, n: int) -> tuple[int, int, int]:
        """Floor the dev and test shares; the remainder goes to train."""
        dev = math.floor(n * self.dev_fraction + 1e-9)
        test = math.floor(n * self.test_fraction + 1e-9)
        return n - dev - test, dev, test


def split_corpus(corpus: Sequence[AnnotatedSentence], spec: SplitSpec = SplitSpec()):
    """Seeded sentence-level partition into (train, dev, test)."""
    n_train, n_dev, n_test = spec.sizes(len(corpus))
    for name, frac, size in [("train", spec.train_fraction, n_train), ("dev", spec.dev_fraction, n_dev),
                             ("test", spec.test_fraction, n_test)]:
        if frac > 0 and size == 0:
            need = math.ceil(1.0 / frac - 1e-9)
            raise CorpusError(
                f"{name} split would be empty with {len(corpus)} sentences; "
                f"need at least {need} sentences for fraction {frac}"
            )
    order = list(range(len(corpus)))
    random.Random(spec.shuffle_seed).shuffle(order)
    items = [corpus[i] for i in order]
    return items[:n_train], items[n_train:n_train + n_dev], items[n_train + n_dev:]
