"""Vocabularies with n-gram tokens and the enrichment algorithm.

A vocabulary is a base token table (byte-level, whitespace, or imported
BPE) plus an ordered list of added n-gram tokens. Encoding first applies
the base tokenizer, then greedily re-merges runs of base ids into added
tokens, always preferring the longest match and breaking ties toward the
lowest added id. Added tokens are therefore consulted before any base
merge logic, and decoding is plain concatenation of token byte strings.

Enrichment repeatedly counts token n-grams over the task outputs, picks
the candidate with the highest merge reward freq * (n - 1), and accepts
it when its prefix collision score stays below a threshold.
"""

from __future__ import annotations

import json
import re
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import NGramCounts, TaskCorpus, TokenSeq, count_ngrams

_TERMINAL = -1  # trie key marking "an added token ends here"; real ids are >= 0

EMBEDDING_MAGIC = b"TASCEMB1"
VOCAB_FORMAT = "tasc-vocab.v1"


class UnencodableError(ValueError):
    """Input contains bytes the vocabulary cannot represent."""


# ---------------------------------------------------------------------------
# Byte-string escaping for the vocabulary file format
# ---------------------------------------------------------------------------

def escape_bytes(data: bytes) -> str:
    """Render bytes as printable ASCII; non-printables and backslash as \\xHH."""
    out = []
    for b in data:
        if 0x20 <= b < 0x7F and b != 0x5C:
            out.append(chr(b))
        else:
            out.append(f"\\x{b:02x}")
    return "".join(out)


def unescape_bytes(text: str) -> bytes:
    """Inverse of :func:`escape_bytes`."""
    out = bytearray()
    i = 0
    while i < len(text):
        ch = text[i]
        if ch == "\\":
            if i + 4 > len(text) or text[i + 1] != "x":
                raise ValueError(f"bad escape at offset {i} in {text!r}")
            out.append(int(text[i + 2:i + 4], 16))
            i += 4
        else:
            code = ord(ch)
            if code > 0x7F:
                raise ValueError(f"non-ASCII character {ch!r} in escaped byte string")
            out.append(code)
            i += 1
    return bytes(out)


# ---------------------------------------------------------------------------
# Base tokenizers
# ---------------------------------------------------------------------------

class ByteTokenizer:
    """Base table of all 256 single bytes; encoding is the identity on bytes."""

    kind = "byte"

    def __init__(self):
        self.base_tokens: list[bytes] = [bytes([i]) for i in range(256)]

    def encode_bytes(self, data: bytes) -> TokenSeq:
        return list(data)


_RUN_RE = re.compile(rb"\s+|\S+")


class WhitespaceTokenizer:
    """Base tokens are runs of whitespace or non-whitespace bytes.

    Splitting into alternating runs keeps encoding reversible: concatenating
    the token strings reproduces the input byte-exactly. Texts containing a
    run absent from the table are unencodable (there is no byte fallback).
    """

    kind = "whitespace"

    def __init__(self, tokens: Sequence[bytes]):
        self.base_tokens = list(tokens)
        self._index: dict[bytes, int] = {}
        for i, tok in enumerate(self.base_tokens):
            if not tok:
                raise ValueError("base token must be non-empty")
            if tok in self._index:
                raise ValueError(f"duplicate base token {tok!r}")
            self._index[tok] = i

    @classmethod
    def from_texts(cls, texts: Iterable[str]) -> "WhitespaceTokenizer":
        """Collect run tokens from texts, in order of first appearance."""
        tokens: dict[bytes, None] = {}
        for text in texts:
            for run in _RUN_RE.findall(text.encode("utf-8")):
                tokens.setdefault(run)
        return cls(list(tokens))

    def encode_bytes(self, data: bytes) -> TokenSeq:
        ids = []
        for run in _RUN_RE.findall(data):
            tid = self._index.get(run)
            if tid is None:
                raise UnencodableError(f"run {run!r} not in whitespace vocabulary")
            ids.append(tid)
        return ids


class BPETokenizer:
    """Byte-level BPE over an imported vocab/merges pair.

    Encoding starts from single bytes and repeatedly replaces every
    occurrence of the lowest-ranked adjacent pair until no merge applies.
    Single bytes missing from the vocabulary make a text unencodable.
    """

    kind = "bpe"

    def __init__(self, tokens: Sequence[bytes], merges: Sequence[tuple[bytes, bytes]]):
        self.base_tokens = list(tokens)
        self._index: dict[bytes, int] = {}
        for i, tok in enumerate(self.base_tokens):
            if not tok:
                raise ValueError("base token must be non-empty")
            if tok in self._index:
                raise ValueError(f"duplicate base token {tok!r}")
            self._index[tok] = i
        self.merges = [(bytes(a), bytes(b)) for a, b in merges]
        self._ranks: dict[tuple[bytes, bytes], int] = {}
        for rank, (a, b) in enumerate(self.merges):
            if a + b not in self._index:
                raise ValueError(f"merge result {(a + b)!r} not in vocabulary")
            self._ranks.setdefault((a, b), rank)

    @classmethod
    def from_files(cls, vocab_path: str | Path, merges_path: str | Path) -> "BPETokenizer":
        """Load the standard two-file layout: one token per vocab line, one
        'left right' rule per merges line. Lines starting with '#' are skipped."""
        tokens = [unescape_bytes(line) for line in _read_lines(vocab_path)]
        merges = []
        for line in _read_lines(merges_path):
            parts = line.split(" ")
            if len(parts) != 2:
                raise ValueError(f"bad merge rule {line!r}")
            merges.append((unescape_bytes(parts[0]), unescape_bytes(parts[1])))
        return cls(tokens, merges)

    def encode_bytes(self, data: bytes) -> TokenSeq:
        parts = [bytes([b]) for b in data]
        while len(parts) >= 2:
            best_rank = None
            best_pair = None
            for pair in zip(parts, parts[1:]):
                rank = self._ranks.get(pair)
                if rank is not None and (best_rank is None or rank < best_rank):
                    best_rank, best_pair = rank, pair
            if best_pair is None:
                break
            merged = best_pair[0] + best_pair[1]
            out = []
            i = 0
            while i < len(parts):
                if i + 1 < len(parts) and (parts[i], parts[i + 1]) == best_pair:
                    out.append(merged)
                    i += 2
                else:
                    out.append(parts[i])
                    i += 1
            parts = out
        ids = []
        for part in parts:
            tid = self._index.get(part)
            if tid is None:
                raise UnencodableError(f"symbol {part!r} not in BPE vocabulary")
            ids.append(tid)
        return ids


def _read_lines(path: str | Path) -> list[str]:
    lines = Path(path).read_text(encoding="utf-8").split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return [ln for ln in lines if not ln.startswith("#")]


BaseTokenizer = ByteTokenizer | WhitespaceTokenizer | BPETokenizer


# ---------------------------------------------------------------------------
# Vocabulary
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AddedToken:
    """An n-gram token appended after the base table."""

    id: int
    constituents: tuple[int, ...]
    string: bytes

    def __post_init__(self):
        if len(self.constituents) < 2:
            raise ValueError("added token needs at least 2 constituents")


class Vocabulary:
    """Base tokenizer plus ordered added n-gram tokens.

    Ids are contiguous from 0: base ids first, added ids in insertion
    order. Instances are immutable after construction; enrichment returns
    new vocabularies sharing the base tokenizer.
    """

    def __init__(self, base: BaseTokenizer, added: Sequence[AddedToken] = ()):
        self.base = base
        self.added_tokens: list[AddedToken] = list(added)
        base_size = len(base.base_tokens)
        for pos, tok in enumerate(self.added_tokens):
            expected_id = base_size + pos
            if tok.id != expected_id:
                raise ValueError(f"added token id {tok.id} out of order; expected {expected_id}")
            if any(c < 0 or c >= tok.id for c in tok.constituents):
                raise ValueError(f"added token {tok.id} references undefined constituent")
            concat = b"".join(self._string_upto(c, pos) for c in tok.constituents)
            if concat != tok.string:
                raise ValueError(
                    f"added token {tok.id} string {tok.string!r} != constituent concat {concat!r}")
        self._matcher: dict | None = None
        self._expansions: dict[int, tuple[int, ...]] = {}

    def _string_upto(self, tid: int, n_added: int) -> bytes:
        base_size = len(self.base.base_tokens)
        if tid < base_size:
            return self.base.base_tokens[tid]
        if tid - base_size < n_added:
            return self.added_tokens[tid - base_size].string
        raise ValueError(f"token id {tid} not yet defined")

    @property
    def base_size(self) -> int:
        return len(self.base.base_tokens)

    @property
    def size(self) -> int:
        return self.base_size + len(self.added_tokens)

    def token_string(self, tid: int) -> bytes:
        if 0 <= tid < self.base_size:
            return self.base.base_tokens[tid]
        if self.base_size <= tid < self.size:
            return self.added_tokens[tid - self.base_size].string
        raise KeyError(f"unknown token id {tid}")

    def expansion(self, tid: int) -> tuple[int, ...]:
        """Flatten a token to the base ids it stands for."""
        if tid < self.base_size:
            return (tid,)
        cached = self._expansions.get(tid)
        if cached is None:
            tok = self.added_tokens[tid - self.base_size]
            cached = tuple(b for c in tok.constituents for b in self.expansion(c))
            self._expansions[tid] = cached
        return cached

    def with_added(self, token: AddedToken) -> "Vocabulary":
        return Vocabulary(self.base, [*self.added_tokens, token])

    def add_ngram(self, ngram: Sequence[int]) -> "Vocabulary":
        """Append a token standing for the given id n-gram."""
        string = b"".join(self.token_string(t) for t in ngram)
        return self.with_added(AddedToken(id=self.size, constituents=tuple(ngram), string=string))

    def prefix(self, n_added: int) -> "Vocabulary":
        """The vocabulary as it was after the first ``n_added`` additions."""
        return Vocabulary(self.base, self.added_tokens[:n_added])

    # -- encode / decode ----------------------------------------------------

    def encode(self, text: str | bytes) -> TokenSeq:
        """Base-encode, then greedily re-merge runs into added tokens."""
        data = text.encode("utf-8") if isinstance(text, str) else bytes(text)
        base_ids = self.base.encode_bytes(data)
        if not self.added_tokens:
            return base_ids
        return self._remerge(base_ids)

    def decode(self, tokens: Sequence[int]) -> bytes:
        return b"".join(self.token_string(t) for t in tokens)

    def decode_text(self, tokens: Sequence[int]) -> str:
        return self.decode(tokens).decode("utf-8")

    def _build_matcher(self) -> dict:
        # Trie over base-id expansions; terminal holds the lowest added id
        # spelling exactly that expansion.
        root: dict = {}
        for tok in self.added_tokens:
            node = root
            for bid in self.expansion(tok.id):
                node = node.setdefault(bid, {})
            if _TERMINAL not in node or tok.id < node[_TERMINAL]:
                node[_TERMINAL] = tok.id
        return root

    def _remerge(self, base_ids: TokenSeq) -> TokenSeq:
        if self._matcher is None:
            self._matcher = self._build_matcher()
        root = self._matcher
        out: TokenSeq = []
        i = 0
        n = len(base_ids)
        while i < n:
            node = root
            best_id = -1
            best_len = 0
            j = i
            while j < n:
                node = node.get(base_ids[j])
                if node is None:
                    break
                j += 1
                tid = node.get(_TERMINAL)
                if tid is not None:
                    best_id, best_len = tid, j - i
            if best_len:
                out.append(best_id)
                i += best_len
            else:
                out.append(base_ids[i])
                i += 1
        return out


def byte_vocabulary() -> Vocabulary:
    return Vocabulary(ByteTokenizer())


def whitespace_vocabulary(corpus: TaskCorpus, sides: Sequence[str] = ("input", "output")) -> Vocabulary:
    texts = [t for side in sides for t in corpus.texts(side)]
    return Vocabulary(WhitespaceTokenizer.from_texts(texts))


# ---------------------------------------------------------------------------
# Vocabulary file format (tasc-vocab.v1)
# ---------------------------------------------------------------------------

def save_vocabulary(vocab: Vocabulary, path: str | Path) -> None:
    """Write the ``tasc-vocab.v1`` structured-text vocabulary file."""
    doc = {
        "format": VOCAB_FORMAT,
        "base_tokenizer": vocab.base.kind,
        "base_tokens": [escape_bytes(t) for t in vocab.base.base_tokens],
        "added_tokens": [
            {"constituents": list(t.constituents), "string": escape_bytes(t.string)}
            for t in vocab.added_tokens
        ],
    }
    if vocab.base.kind == "bpe":
        doc["merges"] = [[escape_bytes(a), escape_bytes(b)] for a, b in vocab.base.merges]
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=True) + "\n",
                          encoding="utf-8")


def load_vocabulary(path: str | Path) -> Vocabulary:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != VOCAB_FORMAT:
        raise ValueError(f"not a {VOCAB_FORMAT} file: {path}")
    tokens = [unescape_bytes(t) for t in doc["base_tokens"]]
    kind = doc.get("base_tokenizer", "byte")
    if kind == "byte":
        base: BaseTokenizer = ByteTokenizer()
        if tokens != base.base_tokens:
            raise ValueError("byte vocabulary must list the 256 single bytes in order")
    elif kind == "whitespace":
        base = WhitespaceTokenizer(tokens)
    elif kind == "bpe":
        merges = [(unescape_bytes(a), unescape_bytes(b)) for a, b in doc.get("merges", [])]
        base = BPETokenizer(tokens, merges)
    else:
        raise ValueError(f"unknown base tokenizer kind {kind!r}")
    base_size = len(tokens)
    added = [
        AddedToken(id=base_size + i, constituents=tuple(entry["constituents"]),
                   string=unescape_bytes(entry["string"]))
        for i, entry in enumerate(doc["added_tokens"])
    ]
    return Vocabulary(base, added)


# ---------------------------------------------------------------------------
# Merge reward, prefix collision score, enrichment
# ---------------------------------------------------------------------------

def merge_reward(ngram: Sequence[int], counts: NGramCounts) -> int:
    """Expected token-count saving of merging the n-gram: freq * (n - 1)."""
    if len(ngram) != counts.order:
        raise ValueError(f"n-gram arity {len(ngram)} != counts order {counts.order}")
    return counts.table.get(tuple(ngram), 0) * (len(ngram) - 1)


def prefix_collision_score(ngram: Sequence[int], vocab: Vocabulary,
                           token_freqs: NGramCounts) -> float:
    """Frequency-weighted chance that the final token's string is a proper
    prefix of another token occurring in the corpus.

    Numerator: corpus frequency of tokens strictly extending the final
    token's string. Denominator: frequency of all tokens starting with it,
    the final token included. An empty denominator scores 0.
    """
    if not ngram:
        raise ValueError("n-gram must be non-empty")
    if token_freqs.order != 1:
        raise ValueError("token_freqs must be unigram counts")
    suffix = vocab.token_string(ngram[-1])
    extending = 0
    covering = 0
    for (tid,), freq in token_freqs.table.items():
        string = vocab.token_string(tid)
        if string.startswith(suffix):
            covering += freq
            if len(string) > len(suffix):
                extending += freq
    return extending / covering if covering else 0.0


@dataclass(frozen=True)
class MergeCandidate:
    """One evaluated n-gram: its corpus frequency, reward, and collision score."""

    ngram: tuple[int, ...]
    freq: int
    reward: int
    pcs: float


@dataclass
class AugmentationConfig:
    budget: int
    max_order: int = 4
    pcs_threshold: float = 0.1
    recount_interval: int = 1

    def __post_init__(self):
        if self.budget < 1:
            raise ValueError("budget must be >= 1")
        if self.max_order < 2:
            raise ValueError("max_order must be >= 2")
        if not 0.0 <= self.pcs_threshold <= 1.0:
            raise ValueError("pcs_threshold must be in [0, 1]")
        if self.recount_interval < 1:
            raise ValueError("recount_interval must be >= 1")


@dataclass
class EnrichmentResult:
    vocab: Vocabulary
    accepted: list[MergeCandidate]
    rejected: list[MergeCandidate]
    exhausted: bool = False


def _argmax_candidate(counts: dict[int, NGramCounts], used: set[tuple[int, ...]],
                      max_order: int) -> tuple[tuple[int, ...], int] | None:
    """Highest-reward unused n-gram; ties go to longer n, then lower id order."""
    best_key: tuple[int, int] | None = None
    best_ngram: tuple[int, ...] | None = None
    best_freq = 0
    for n in range(2, max_order + 1):
        for ngram, freq in counts[n].table.items():
            if ngram in used:
                continue
            key = (freq * (n - 1), n)
            if best_key is None or key > best_key or (key == best_key and ngram < best_ngram):
                best_key, best_ngram, best_freq = key, ngram, freq
    if best_ngram is None:
        return None
    return best_ngram, best_freq


def enrich_vocabulary(corpus: TaskCorpus, base: Vocabulary,
                      config: AugmentationConfig) -> EnrichmentResult:
    """Iteratively add the highest-reward output n-grams to the vocabulary.

    Each round tokenizes the output side under the current vocabulary
    (re-tokenizing every ``recount_interval`` acceptances), takes the
    unused n-gram of order 2..max_order with the highest merge reward, and
    accepts it when its prefix collision score is below the threshold.
    Evaluated candidates are never revisited. Stops after ``budget``
    acceptances or when candidates run out (``exhausted`` is then set).
    """
    texts = corpus.texts("output")
    vocab = base

    def fresh_counts() -> dict[int, NGramCounts]:
        sequences = [vocab.encode(t) for t in texts]
        return {n: count_ngrams(sequences, n) for n in range(1, config.max_order + 1)}

    counts = fresh_counts()
    if all(counts[n].total == 0 for n in range(2, config.max_order + 1)):
        raise ValueError("no merge candidates: every tokenized output is shorter than 2 tokens")

    used: set[tuple[int, ...]] = set()
    accepted: list[MergeCandidate] = []
    rejected: list[MergeCandidate] = []
    stale = False  # acceptances since the counts were last refreshed
    accepts_since_recount = 0
    exhausted = False

    while len(accepted) < config.budget:
        picked = _argmax_candidate(counts, used, config.max_order)
        if picked is None and stale:
            counts = fresh_counts()
            stale = False
            accepts_since_recount = 0
            picked = _argmax_candidate(counts, used, config.max_order)
        if picked is None:
            exhausted = True
            break
        ngram, freq = picked
        pcs = prefix_collision_score(ngram, vocab, counts[1])
        used.add(ngram)
        candidate = MergeCandidate(ngram=ngram, freq=freq,
                                   reward=freq * (len(ngram) - 1), pcs=pcs)
        if pcs < config.pcs_threshold:
            vocab = vocab.add_ngram(ngram)
            accepted.append(candidate)
            accepts_since_recount += 1
            stale = True
            if accepts_since_recount >= config.recount_interval:
                counts = fresh_counts()
                stale = False
                accepts_since_recount = 0
        else:
            rejected.append(candidate)

    return EnrichmentResult(vocab=vocab, accepted=accepted, rejected=rejected,
                            exhausted=exhausted)


# ---------------------------------------------------------------------------
# Embedding rows for added tokens
# ---------------------------------------------------------------------------

@dataclass
class EmbeddingMatrix:
    """Dense rows, one per token id; all entries finite."""

    rows: np.ndarray

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float64)
        if self.rows.ndim != 2:
            raise ValueError("embedding matrix must be 2-dimensional")
        if not np.all(np.isfinite(self.rows)):
            raise ValueError("embedding matrix contains non-finite entries")

    @property
    def dim(self) -> int:
        return self.rows.shape[1]


def init_embeddings(embeddings: EmbeddingMatrix, vocab: Vocabulary) -> EmbeddingMatrix:
    """Extend base-token rows with one mean-of-constituents row per added token.

    Rows are resolved in insertion order, so constituents that are
    themselves added tokens are already filled in. Base rows pass through
    unchanged.
    """
    if embeddings.rows.shape[0] < vocab.base_size:
        raise ValueError(
            f"embedding matrix has {embeddings.rows.shape[0]} rows; "
            f"base vocabulary needs {vocab.base_size}")
    out = np.empty((vocab.size, embeddings.dim), dtype=np.float64)
    out[:vocab.base_size] = embeddings.rows[:vocab.base_size]
    for tok in vocab.added_tokens:
        out[tok.id] = np.mean([out[c] for c in tok.constituents], axis=0)
    return EmbeddingMatrix(rows=out)


def save_embeddings(embeddings: EmbeddingMatrix, path: str | Path) -> None:
    """Flat binary: 16-byte header (magic, rows, dim) then row-major <f8."""
    rows, dim = embeddings.rows.shape
    header = EMBEDDING_MAGIC + struct.pack("<II", rows, dim)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(embeddings.rows, dtype="<f8").tobytes())


def load_embeddings(path: str | Path) -> EmbeddingMatrix:
    blob = Path(path).read_bytes()
    if len(blob) < 16 or blob[:8] != EMBEDDING_MAGIC:
        raise ValueError(f"not an embedding matrix file: {path}")
    rows, dim = struct.unpack("<II", blob[8:16])
    expected = 16 + rows * dim * 8
    if len(blob) != expected:
        raise ValueError(f"embedding file size {len(blob)} != expected {expected}")
    data = np.frombuffer(blob, dtype="<f8", offset=16).reshape(rows, dim)
    return EmbeddingMatrix(rows=data.copy())


# ---------------------------------------------------------------------------
# Compression reporting
# ---------------------------------------------------------------------------

@dataclass
class CompressionReport:
    avg_len_before: float
    avg_len_after: float
    compression_ratio: float
    bytes_per_token_before: float
    bytes_per_token_after: float


def compression_report(corpus: TaskCorpus, before: Vocabulary,
                       after: Vocabulary) -> CompressionReport:
    """Average output length and bytes-per-token under two vocabularies."""
    texts = corpus.texts("output")
    total_bytes = sum(len(t.encode("utf-8")) for t in texts)
    tokens_before = sum(len(before.encode(t)) for t in texts)
    tokens_after = sum(len(after.encode(t)) for t in texts)
    n_docs = len(texts)
    return CompressionReport(
        avg_len_before=tokens_before / n_docs,
        avg_len_after=tokens_after / n_docs,
        compression_ratio=tokens_before / tokens_after,
        bytes_per_token_before=total_bytes / tokens_before,
        bytes_per_token_after=total_bytes / tokens_after,
    )
