"""Synthetic GENIA-style corpus with known statistics.

Used when the real GENIA 3.02 release is not available. Counts are derived
from the generator's own token bookkeeping, not from the parser.
"""

from __future__ import annotations

import json
import random
from importlib import resources
from pathlib import Path
from xml.sax.saxutils import escape

# term templates: a node is a list of children; a child is a word or a nested node
TERMS = [
    ["IL-2"],
    ["NF-kappa", "B"],
    [["IL-2"], "gene"],
    [[["interleukin-2"], "receptor", "alpha"], "gene"],
    [["Mouse", ["interleukin-2"], "receptor", "alpha", "gene"], "expression"],
    [["T", "cells"]],
    ["human", ["T", "cells"]],
    ["peripheral", "blood", ["monocytes"]],
    [["c-fos"], "promoter"],
    [["glucocorticoid", "receptor"]],
    ["transcription", "factor"],
    [["NF-kappa", "B"], "binding", "site"],
    ["protein", "kinase", "C"],
    [["CD28"], "surface", "receptor"],
    ["cytokine", "gene", "expression"],
    ["Jurkat", ["T", "cells"]],
    [["GATA-1"], "mRNA"],
    ["tumor", "necrosis", "factor", "alpha"],
    [["human", "immunodeficiency", "virus", "type", "1"], "long", "terminal", "repeat"],
    [[["estrogen"], "receptor"], "response", "element", "binding", "activity", "in", ["B", "cells"]],
    ["monocytes"],
    [["AP-1"], "sites"],
]

FILLER = ["the", "of", "in", "and", "we", "show", "that", "was", "induced", "by", "activation",
          "is", "required", "for", "a", "these", "results", "suggest", "regulates", "with", "to",
          "binds", "also", "observed", "after", "stimulation", "via", "levels", "were", "increased"]


def _render(node, tokens: list[str], spans: list[tuple[int, int]]) -> str:
    start = len(tokens)
    parts = []
    for child in node:
        if isinstance(child, str):
            tokens.append(child)
            parts.append(escape(child))
        else:
            parts.append(_render(child, tokens, spans))
    spans.append((start, len(tokens) - 1))
    return f'<cons sem="G#other">{" ".join(parts)}</cons>'


def _nested_count(spans: set[tuple[int, int]]) -> int:
    spans = list(spans)
    return sum(
        any(i != j and not (e1 < s2 or e2 < s1) for j, (s2, e2) in enumerate(spans))
        for i, (s1, e1) in enumerate(spans)
    )


def generate_fixture(num_sentences: int = 200, seed: int = 626, per_article: int = 10):
    """Returns (xml_text, expected_statistics, records)."""
    rng = random.Random(seed)
    sentences_xml, records = [], []
    for _ in range(num_sentences):
        tokens: list[str] = []
        spans: list[tuple[int, int]] = []
        parts = []
        for chunk in range(rng.randint(3, 6)):
            if chunk % 2 == 0:
                words = [rng.choice(FILLER) for _ in range(rng.randint(1, 4))]
                tokens.extend(words)
                parts.append(" ".join(escape(w) for w in words))
            else:
                parts.append(_render(rng.choice(TERMS), tokens, spans))
        sentences_xml.append("<sentence>" + " ".join(parts) + " .</sentence>")
        tokens.append(".")
        records.append({"tokens": tokens, "spans": sorted(set(spans))})

    articles = []
    for a in range(0, num_sentences, per_article):
        body = sentences_xml[a:a + per_article]
        articles.append(
            f"<article><articleinfo><bibliomisc>MEDLINE:{90000000 + a}</bibliomisc></articleinfo>\n"
            f"<title>{body[0]}</title>\n<abstract>\n" + "\n".join(body[1:]) + "\n</abstract></article>"
        )
    xml = '<?xml version="1.0" encoding="UTF-8"?>\n<set>\n' + "\n".join(articles) + "\n</set>\n"

    lengths: dict[int, int] = {}
    nested = 0
    for rec in records:
        spans = set(map(tuple, rec["spans"]))
        nested += _nested_count(spans)
        for s, e in spans:
            lengths[e - s + 1] = lengths.get(e - s + 1, 0) + 1
    num_terms = sum(lengths.values())
    expected = {
        "num_sentences": num_sentences,
        "num_words": sum(len(r["tokens"]) for r in records),
        "num_terms": num_terms,
        "num_nested_terms": nested,
        "num_independent_terms": num_terms - nested,
        "max_term_length": max(lengths),
        "length_histogram": {str(k): lengths[k] for k in sorted(lengths)},
    }
    return xml, expected, records


def fixture_path() -> Path:
    return Path(str(resources.files("nestterm") / "data" / "synthetic_genia.xml"))


def expected_stats() -> dict:
    return json.loads((fixture_path().with_name("synthetic_genia.expected.json")).read_text())


def write_fixture(directory: str | Path) -> None:
    directory = Path(directory)
    xml, expected, _ = generate_fixture()
    (directory / "synthetic_genia.xml").write_text(xml, encoding="utf-8")
    (directory / "synthetic_genia.expected.json").write_text(json.dumps(expected, indent=2) + "\n")


if __name__ == "__main__":
    write_fixture(Path(__file__).parent / "data")
