"""Count-based n-gram drafters and their mixture.

A corpus drafter holds pruned next-token count tables for orders
2..max_order built from the task outputs; a prompt drafter holds unpruned
tables over a single growing sequence. Lookups query the highest order
whose context matches and fall through to lower orders, ending at the
globally most frequent token. The mixture combines both distributions
pointwise with a fixed corpus weight.
"""

from __future__ import annotations

import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .corpus import TokenSeq
from .metrics import EmpiricalDistribution

NGRAM_MAGIC = b"TASCNGR1"


@dataclass
class NGramModel:
    """Order-n conditional count table: (n-1)-token context -> next -> count."""

    order: int
    table: dict[tuple[int, ...], dict[int, int]] = field(default_factory=dict)
    pruned_below: int = 1


def _count_model(sequences: Sequence[Sequence[int]], order: int, min_count: int) -> NGramModel:
    counts: dict[tuple[int, ...], Counter[int]] = {}
    for seq in sequences:
        for i in range(len(seq) - order + 1):
            context = tuple(seq[i:i + order - 1])
            counts.setdefault(context, Counter())[seq[i + order - 1]] += 1
    table: dict[tuple[int, ...], dict[int, int]] = {}
    for context, nexts in counts.items():
        kept = {tok: c for tok, c in nexts.items() if c >= min_count}
        if kept:
            table[context] = kept
    return NGramModel(order=order, table=table, pruned_below=min_count)


def _most_frequent_token(sequences: Sequence[Sequence[int]]) -> int:
    counts: Counter[int] = Counter()
    for seq in sequences:
        counts.update(seq)
    if not counts:
        raise ValueError("no tokens to derive a fallback from")
    # highest count, ties to the lowest id
    return min(counts, key=lambda t: (-counts[t], t))


@dataclass
class CorpusDrafter:
    """Pruned per-order models over the task outputs, orders ascending."""

    models: list[NGramModel]
    unigram_fallback: int
    vocab_size: int

    @property
    def max_order(self) -> int:
        return self.models[-1].order if self.models else 1

    def distribution(self, context: Sequence[int]) -> EmpiricalDistribution:
        return drafter_distribution(self, context)


def build_corpus_drafter(sequences: Sequence[Sequence[int]], max_order: int,
                         min_count: int, vocab_size: int | None = None) -> CorpusDrafter:
    """Count and prune models for orders 2..max_order over the sequences."""
    if max_order < 2:
        raise ValueError("max_order must be >= 2")
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    if not sequences:
        raise ValueError("cannot build a drafter from an empty corpus")
    fallback = _most_frequent_token(sequences)
    models = [_count_model(sequences, n, min_count) for n in range(2, max_order + 1)]
    if vocab_size is None:
        vocab_size = max(max(seq) for seq in sequences if seq) + 1
    return CorpusDrafter(models=models, unigram_fallback=fallback, vocab_size=vocab_size)


@dataclass
class PromptDrafter:
    """Unpruned models over one prompt, optionally refreshed with accepted
    output tokens as generation proceeds."""

    models: list[NGramModel]
    unigram_fallback: int
    refresh_enabled: bool = True
    fallback_flagged: bool = False  # set when built from an empty prompt
    _sequence: list[int] = field(default_factory=list, repr=False)
    _unigrams: Counter = field(default_factory=Counter, repr=False)

    @property
    def max_order(self) -> int:
        return self.models[-1].order if self.models else 1

    def distribution(self, context: Sequence[int]) -> EmpiricalDistribution:
        return drafter_distribution(self, context)


def build_prompt_drafter(prompt: Sequence[int], max_order: int,
                         refresh_enabled: bool = True) -> PromptDrafter:
    """Build unpruned tables from a single sequence; empty prompts fall back
    to token id 0 and are flagged."""
    if max_order < 2:
        raise ValueError("max_order must be >= 2")
    prompt = list(prompt)
    models = [_count_model([prompt], n, 1) for n in range(2, max_order + 1)]
    unigrams = Counter(prompt)
    if unigrams:
        fallback = min(unigrams, key=lambda t: (-unigrams[t], t))
        flagged = False
    else:
        fallback = 0
        flagged = True
    return PromptDrafter(models=models, unigram_fallback=fallback,
                         refresh_enabled=refresh_enabled, fallback_flagged=flagged,
                         _sequence=prompt, _unigrams=unigrams)


def refresh_prompt_drafter(drafter: PromptDrafter, accepted: Sequence[int]) -> PromptDrafter:
    """Extend the drafter's sequence with accepted tokens, incrementally.

    Counting matches a full rebuild from the concatenated sequence; the
    drafter is updated in place and returned.
    """
    if not accepted:
        return drafter
    old_len = len(drafter._sequence)
    drafter._sequence.extend(accepted)
    seq = drafter._sequence
    for model in drafter.models:
        n = model.order
        # only windows ending past the old boundary are new
        start = max(0, old_len - n + 1)
        for i in range(start, len(seq) - n + 1):
            context = tuple(seq[i:i + n - 1])
            model.table.setdefault(context, {})
            nexts = model.table[context]
            nexts[seq[i + n - 1]] = nexts.get(seq[i + n - 1], 0) + 1
    drafter._unigrams.update(accepted)
    drafter.unigram_fallback = min(drafter._unigrams,
                                   key=lambda t: (-drafter._unigrams[t], t))
    drafter.fallback_flagged = False
    return drafter


# ---------------------------------------------------------------------------
# Lookup, mixture, drafting
# ---------------------------------------------------------------------------

def drafter_distribution(drafter: CorpusDrafter | PromptDrafter,
                         context: Sequence[int]) -> EmpiricalDistribution:
    """Next-token distribution from the highest matching order.

    The first model, scanning orders descending, whose (n-1)-token context
    suffix has an entry wins outright; lower orders are never blended in.
    With no match anywhere, the result is a point mass on the fallback.
    """
    for model in reversed(drafter.models):
        ctx_len = model.order - 1
        if len(context) < ctx_len:
            continue
        key = tuple(context[len(context) - ctx_len:])
        nexts = model.table.get(key)
        if nexts:
            total = sum(nexts.values())
            support = sorted((tok, c / total) for tok, c in nexts.items())
            return EmpiricalDistribution(support)
    return EmpiricalDistribution([(drafter.unigram_fallback, 1.0)])


@dataclass
class MixedDrafter:
    """Pointwise mixture of a corpus and a prompt drafter.

    ``corpus_weight`` scales the corpus side; the prompt side gets the
    complement. The prompt drafter is refreshed with accepted tokens via
    :meth:`observe` when its refresh policy is enabled.
    """

    corpus: CorpusDrafter
    prompt: PromptDrafter
    corpus_weight: float = 0.75

    def __post_init__(self):
        if not 0.0 <= self.corpus_weight <= 1.0:
            raise ValueError("corpus_weight must be in [0, 1]")

    def distribution(self, context: Sequence[int]) -> EmpiricalDistribution:
        return mixed_distribution(self, context)

    def observe(self, accepted: Sequence[int]) -> None:
        if self.prompt.refresh_enabled:
            refresh_prompt_drafter(self.prompt, accepted)


def mixed_distribution(mixed: MixedDrafter, context: Sequence[int]) -> EmpiricalDistribution:
    """Weighted pointwise combination of the two drafter distributions."""
    lam = mixed.corpus_weight
    p_corp = mixed.corpus.distribution(context).as_dict()
    p_prompt = mixed.prompt.distribution(context).as_dict()
    combined: dict[int, float] = {}
    for tok, p in p_corp.items():
        if lam > 0.0:
            combined[tok] = combined.get(tok, 0.0) + lam * p
    for tok, p in p_prompt.items():
        if lam < 1.0:
            combined[tok] = combined.get(tok, 0.0) + (1.0 - lam) * p
    return EmpiricalDistribution(sorted(combined.items()))


def greedy_token(dist: EmpiricalDistribution) -> int:
    """Most probable token; exact probability ties go to the lowest id."""
    best_tok = None
    best_p = -1.0
    for tok, p in dist.support:
        if p > best_p or (p == best_p and tok < best_tok):
            best_tok, best_p = tok, p
    return best_tok


def draft(drafter, context: Sequence[int], draft_len: int) -> TokenSeq:
    """Greedy autoregressive proposal of ``draft_len`` tokens.

    Each drafted token is appended to the working context before the next
    lookup; drafter tables themselves are not refreshed mid-draft.
    """
    if draft_len < 1:
        raise ValueError("draft_len must be >= 1")
    work = list(context)
    out: TokenSeq = []
    for _ in range(draft_len):
        tok = greedy_token(drafter.distribution(work))
        out.append(tok)
        work.append(tok)
    return out


# ---------------------------------------------------------------------------
# N-gram table file (tasc-ngrams.v1)
# ---------------------------------------------------------------------------

def save_drafter(drafter: CorpusDrafter, path: str | Path) -> None:
    """Binary table dump: header (magic, max order, prune threshold, vocab
    size, fallback id), then per order the entry count and lexicographically
    sorted (context ids, next id, count) runs."""
    max_order = drafter.max_order
    min_count = drafter.models[0].pruned_below if drafter.models else 1
    out = bytearray()
    out += NGRAM_MAGIC
    out += struct.pack("<IIII", max_order, min_count, drafter.vocab_size,
                       drafter.unigram_fallback)
    for model in drafter.models:
        entries = sorted(
            (context + (tok,), count)
            for context, nexts in model.table.items()
            for tok, count in nexts.items()
        )
        out += struct.pack("<Q", len(entries))
        for ids, count in entries:
            out += struct.pack(f"<{model.order}IQ", *ids, count)
    Path(path).write_bytes(bytes(out))


def load_drafter(path: str | Path) -> CorpusDrafter:
    blob = Path(path).read_bytes()
    if len(blob) < 24 or blob[:8] != NGRAM_MAGIC:
        raise ValueError(f"not a tasc-ngrams.v1 file: {path}")
    max_order, min_count, vocab_size, fallback = struct.unpack("<IIII", blob[8:24])
    offset = 24
    models = []
    for order in range(2, max_order + 1):
        (n_entries,) = struct.unpack_from("<Q", blob, offset)
        offset += 8
        entry_fmt = f"<{order}IQ"
        entry_size = struct.calcsize(entry_fmt)
        table: dict[tuple[int, ...], dict[int, int]] = {}
        for _ in range(n_entries):
            *ids, count = struct.unpack_from(entry_fmt, blob, offset)
            offset += entry_size
            table.setdefault(tuple(ids[:-1]), {})[ids[-1]] = count
        models.append(NGramModel(order=order, table=table, pruned_below=min_count))
    if offset != len(blob):
        raise ValueError(f"trailing bytes in n-gram file: {path}")
    return CorpusDrafter(models=models, unigram_fallback=fallback, vocab_size=vocab_size)
