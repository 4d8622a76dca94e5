"""Task corpora: loading, tokenization, and exact n-gram counting.

A task corpus is an ordered collection of (input, output) document pairs.
Every downstream statistic (merge rewards, drafter tables, entropy reports)
is derived from n-gram counts over these documents. Windows never cross
document boundaries and no sentinel tokens are inserted.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

TokenSeq = list[int]

CORPUS_FORMATS = ("tasc.v1", "plain")


class CorpusError(Exception):
    """Unreadable or malformed corpus input.

    ``line`` carries the 1-based record number when the failure is tied to
    a specific record.
    """

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


@dataclass(frozen=True)
class Document:
    """One (input, output) pair. The output text must be non-empty."""

    input_text: str
    output_text: str

    def __post_init__(self):
        if not self.output_text:
            raise ValueError("output_text must be non-empty")


@dataclass
class TaskCorpus:
    """Ordered list of documents; order is stable across runs."""

    documents: list[Document]
    id: str = ""

    def __post_init__(self):
        if not self.documents:
            raise ValueError("corpus must contain at least one document")

    def __len__(self) -> int:
        return len(self.documents)

    def texts(self, side: str) -> list[str]:
        """All texts of one side, in document order."""
        if side == "input":
            return [d.input_text for d in self.documents]
        if side == "output":
            return [d.output_text for d in self.documents]
        raise ValueError(f"side must be 'input' or 'output', got {side!r}")


@dataclass
class NGramCounts:
    """Exact counts of contiguous token n-grams.

    ``total`` is the number of counted windows, i.e. the sum over sequences
    of max(0, len - order + 1); it always equals the sum of the counts.
    """

    order: int
    table: dict[tuple[int, ...], int] = field(default_factory=dict)
    total: int = 0


def load_corpus(path: str | Path, format: str = "tasc.v1") -> TaskCorpus:
    """Read a corpus file into a :class:`TaskCorpus`.

    ``tasc.v1`` is line-delimited JSON with string fields ``input`` and
    ``output``; ``plain`` is one output per line with empty inputs.
    """
    if format not in CORPUS_FORMATS:
        raise CorpusError(f"unknown corpus format {format!r}; expected one of {CORPUS_FORMATS}")
    path = Path(path)
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise CorpusError(f"cannot read corpus file {path}: {exc}") from exc
    except UnicodeDecodeError as exc:
        raise CorpusError(f"corpus file {path} is not valid UTF-8: {exc}") from exc

    lines = raw.split("\n")
    if lines and lines[-1] == "":
        lines.pop()

    documents: list[Document] = []
    for lineno, line in enumerate(lines, start=1):
        if format == "tasc.v1":
            documents.append(_parse_record(line, lineno))
        else:
            if line == "":
                raise CorpusError("empty output line", line=lineno)
            documents.append(Document(input_text="", output_text=line))

    if not documents:
        raise CorpusError(f"corpus file {path} contains no records")
    return TaskCorpus(documents=documents, id=path.stem)


def _parse_record(line: str, lineno: int) -> Document:
    try:
        record = json.loads(line)
    except json.JSONDecodeError as exc:
        raise CorpusError(f"invalid record: {exc.msg}", line=lineno) from exc
    if not isinstance(record, dict):
        raise CorpusError("record is not an object", line=lineno)
    for key in ("input", "output"):
        if key not in record:
            raise CorpusError(f"record missing {key!r} field", line=lineno)
        if not isinstance(record[key], str):
            raise CorpusError(f"record field {key!r} is not a string", line=lineno)
    try:
        return Document(input_text=record["input"], output_text=record["output"])
    except ValueError as exc:
        raise CorpusError(str(exc), line=lineno) from exc


def save_corpus(corpus: TaskCorpus, path: str | Path) -> None:
    """Write a corpus in the ``tasc.v1`` line-delimited format."""
    with open(path, "w", encoding="utf-8") as fh:
        for doc in corpus.documents:
            fh.write(json.dumps({"input": doc.input_text, "output": doc.output_text},
                                ensure_ascii=False, sort_keys=True))
            fh.write("\n")


def tokenize_corpus(corpus: TaskCorpus, vocab, side: str = "output") -> list[TokenSeq]:
    """Tokenize one side of the corpus, one sequence per document.

    ``vocab`` is any object with an ``encode(text) -> list[int]`` method
    whose decode round-trips the original text byte-exactly.
    """
    return [vocab.encode(text) for text in corpus.texts(side)]


def count_ngrams(sequences: Iterable[Sequence[int]], n: int) -> NGramCounts:
    """Count contiguous n-token windows; windows never cross sequences."""
    if n < 1:
        raise ValueError(f"n-gram order must be >= 1, got {n}")
    table: Counter[tuple[int, ...]] = Counter()
    total = 0
    for seq in sequences:
        windows = len(seq) - n + 1
        if windows <= 0:
            continue
        total += windows
        for i in range(windows):
            table[tuple(seq[i:i + n])] += 1
    return NGramCounts(order=n, table=dict(table), total=total)
