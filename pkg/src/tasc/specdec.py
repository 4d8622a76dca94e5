"""Speculative decoding: draft with an n-gram mixture, verify greedily.

Verification is exact-match greedy: a drafted token is accepted only when
it equals the target's greedy choice at its position, so the emitted
sequence is byte-identical to decoding the target alone. One verify call
counts as one target pass regardless of the draft length, mirroring the
parallel scoring of all positions in a single forward pass.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence, runtime_checkable

import numpy as np

from .corpus import TokenSeq
from .drafter import CorpusDrafter, draft, drafter_distribution, greedy_token
from .metrics import EmpiricalDistribution


class OutputInvarianceError(AssertionError):
    """Speculative output diverged from plain greedy decoding."""


@runtime_checkable
class TargetModel(Protocol):
    """Anything that deterministically maps a context to a next-token
    distribution with a well-defined lowest-id-tie-break argmax."""

    vocab_size: int

    def next_distribution(self, context: Sequence[int]) -> EmpiricalDistribution:
        ...


class NGramTargetModel:
    """Reference target: a (typically higher-order) n-gram table stack."""

    def __init__(self, drafter: CorpusDrafter):
        self._drafter = drafter
        self.vocab_size = drafter.vocab_size

    def next_distribution(self, context: Sequence[int]) -> EmpiricalDistribution:
        return drafter_distribution(self._drafter, context)


class RandomLogitTargetModel:
    """Reference target with seeded pseudo-random logits per context.

    The distribution for a context is a softmax over standard-normal
    logits drawn from a generator keyed by (seed, context), so repeated
    queries and repeated runs agree exactly.
    """

    def __init__(self, vocab_size: int, seed: int = 0):
        if vocab_size < 1:
            raise ValueError("vocab_size must be >= 1")
        self.vocab_size = vocab_size
        self.seed = seed

    def next_distribution(self, context: Sequence[int]) -> EmpiricalDistribution:
        key = hashlib.blake2b(digest_size=8)
        key.update(str(self.seed).encode())
        for tok in context:
            key.update(b"," + str(tok).encode())
        rng = np.random.default_rng(int.from_bytes(key.digest(), "little"))
        logits = rng.standard_normal(self.vocab_size)
        probs = np.exp(logits - logits.max())
        probs /= probs.sum()
        return EmpiricalDistribution(list(enumerate(probs.tolist())))


# ---------------------------------------------------------------------------
# Draft verification and the generation loop
# ---------------------------------------------------------------------------

@dataclass
class StepRecord:
    """One draft/verify round: what was proposed, how much survived."""

    drafted: TokenSeq
    accepted_count: int
    correction_token: int
    target_calls: int = 1


def target_greedy(target: TargetModel, context: Sequence[int]) -> int:
    return greedy_token(target.next_distribution(context))


def verify(target: TargetModel, context: Sequence[int], drafted: Sequence[int]) -> StepRecord:
    """Exact-match greedy verification of a drafted continuation.

    Accepts the longest prefix that matches the target's greedy chain and
    produces the target's token at the first divergence (or the bonus
    token after a fully accepted draft). Counts as a single target pass.
    """
    if not drafted:
        raise ValueError("drafted sequence must be non-empty")
    work = list(context)
    accepted = 0
    for tok in drafted:
        choice = target_greedy(target, work)
        if choice != tok:
            return StepRecord(drafted=list(drafted), accepted_count=accepted,
                              correction_token=choice)
        work.append(tok)
        accepted += 1
    bonus = target_greedy(target, work)
    return StepRecord(drafted=list(drafted), accepted_count=accepted,
                      correction_token=bonus)


@dataclass
class AccelerationReport:
    total_tokens: int
    target_passes: int
    tokens_per_pass: float
    acceptance_by_position: list[float]
    first_position_rate: float
    draft_calls: int = 0


def acceptance_by_position(records: Sequence[StepRecord], draft_len: int) -> list[float]:
    """Per-position acceptance: fraction of steps accepting at least i+1 tokens."""
    if not records:
        raise ValueError("no step records")
    n = len(records)
    return [sum(1 for r in records if r.accepted_count >= i + 1) / n
            for i in range(draft_len)]


def build_report(records: Sequence[StepRecord], draft_len: int, total_tokens: int,
                 draft_calls: int) -> AccelerationReport:
    passes = sum(r.target_calls for r in records)
    rates = acceptance_by_position(records, draft_len)
    return AccelerationReport(
        total_tokens=total_tokens,
        target_passes=passes,
        tokens_per_pass=total_tokens / passes,
        acceptance_by_position=rates,
        first_position_rate=rates[0] if rates else 0.0,
        draft_calls=draft_calls,
    )


def greedy_decode(target: TargetModel, prompt: Sequence[int], max_tokens: int,
                  stop_token: int | None = None) -> TokenSeq:
    """Plain greedy decoding; the reference for output invariance."""
    out: TokenSeq = []
    work = list(prompt)
    while len(out) < max_tokens:
        tok = target_greedy(target, work)
        out.append(tok)
        work.append(tok)
        if stop_token is not None and tok == stop_token:
            break
    return out


def generate(target: TargetModel, drafter, prompt: Sequence[int], max_tokens: int,
             draft_len: int, stop_token: int | None = None,
             ) -> tuple[TokenSeq, AccelerationReport, list[StepRecord]]:
    """Draft-and-verify generation loop.

    ``drafter`` needs ``distribution(context)`` and ``observe(tokens)``;
    :class:`~tasc.drafter.MixedDrafter` fits, as does any test double.
    Per-step draft length is capped at the remaining token budget minus
    one so a step never emits past ``max_tokens``. Generation ends at the
    budget or right after the stop token. The returned sequence equals
    :func:`greedy_decode` of the target alone, truncated identically.
    """
    if max_tokens < 1:
        raise ValueError("max_tokens must be >= 1")
    if draft_len < 1:
        raise ValueError("draft_len must be >= 1")
    generated: TokenSeq = []
    records: list[StepRecord] = []
    draft_calls = 0
    done = False
    while len(generated) < max_tokens and not done:
        context = list(prompt) + generated
        step_len = min(draft_len, max_tokens - len(generated) - 1)
        if step_len >= 1:
            drafted = draft(drafter, context, step_len)
            draft_calls += step_len
            record = verify(target, context, drafted)
        else:
            # budget leaves room for a single token: plain target step
            record = StepRecord(drafted=[], accepted_count=0,
                                correction_token=target_greedy(target, context))
        records.append(record)
        step_tokens = list(record.drafted[:record.accepted_count])
        step_tokens.append(record.correction_token)
        if stop_token is not None and stop_token in step_tokens:
            step_tokens = step_tokens[:step_tokens.index(stop_token) + 1]
            done = True
        generated.extend(step_tokens)
        drafter.observe(step_tokens)
    report = build_report(records, draft_len, len(generated), draft_calls)
    return generated, report, records


def check_output_invariance(target: TargetModel, generated: Sequence[int],
                            prompt: Sequence[int], max_tokens: int,
                            stop_token: int | None = None) -> None:
    """Raise unless the generated tokens equal plain greedy decoding."""
    reference = greedy_decode(target, prompt, max_tokens, stop_token)
    if list(generated) != reference:
        raise OutputInvarianceError(
            f"speculative output {list(generated)} != greedy output {reference}")


def modeled_speedup(report: AccelerationReport, cost_target: float,
                    cost_draft: float) -> float:
    """Speedup under a simple cost model; zero draft cost reduces to
    tokens per pass."""
    if cost_target <= 0 or cost_draft < 0:
        raise ValueError("costs must be positive (draft cost may be 0)")
    baseline = report.total_tokens * cost_target
    actual = report.target_passes * cost_target + report.draft_calls * cost_draft
    return baseline / actual


# ---------------------------------------------------------------------------
# Session trace files
# ---------------------------------------------------------------------------

def write_trace(records: Sequence[StepRecord], path: str | Path) -> None:
    """Line-delimited step records: (step, drafted ids, k, correction id)."""
    with open(path, "w", encoding="utf-8") as fh:
        for step, record in enumerate(records):
            fh.write(json.dumps({
                "step": step,
                "drafted": list(record.drafted),
                "k": record.accepted_count,
                "correction": record.correction_token,
            }, sort_keys=True))
            fh.write("\n")


def read_trace(path: str | Path) -> list[StepRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            records.append(StepRecord(drafted=list(row["drafted"]),
                                      accepted_count=row["k"],
                                      correction_token=row["correction"]))
    return records


# ---------------------------------------------------------------------------
# Offline target protocol
# ---------------------------------------------------------------------------

def write_context_requests(contexts: Sequence[Sequence[int]], path: str | Path) -> None:
    """Request file: one context per line for an external model to score."""
    with open(path, "w", encoding="utf-8") as fh:
        for i, context in enumerate(contexts):
            fh.write(json.dumps({"id": i, "context": list(context)}, sort_keys=True))
            fh.write("\n")


def read_context_requests(path: str | Path) -> list[TokenSeq]:
    contexts = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                contexts.append(list(json.loads(line)["context"]))
    return contexts


def answer_context_requests(target: TargetModel, request_path: str | Path,
                            response_path: str | Path) -> None:
    """Produce the response file for a request file using a local target."""
    contexts = read_context_requests(request_path)
    with open(response_path, "w", encoding="utf-8") as fh:
        for i, context in enumerate(contexts):
            dist = target.next_distribution(context)
            fh.write(json.dumps({
                "id": i,
                "argmax": greedy_token(dist),
                "distribution": {str(tok): p for tok, p in dist.support},
            }, sort_keys=True))
            fh.write("\n")


class OfflineTargetModel:
    """Target whose answers were precomputed through the file protocol.

    Built from a matching request/response file pair; queries for contexts
    outside the covered set fail loudly.
    """

    def __init__(self, responses: dict[tuple[int, ...], EmpiricalDistribution],
                 vocab_size: int):
        self._responses = responses
        self.vocab_size = vocab_size

    @classmethod
    def from_files(cls, request_path: str | Path, response_path: str | Path,
                   vocab_size: int | None = None) -> "OfflineTargetModel":
        contexts = read_context_requests(request_path)
        responses: dict[tuple[int, ...], EmpiricalDistribution] = {}
        max_tok = 0
        with open(response_path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                row = json.loads(line)
                context = tuple(contexts[row["id"]])
                support = sorted((int(tok), p) for tok, p in row["distribution"].items())
                responses[context] = EmpiricalDistribution(support)
                max_tok = max(max_tok, max(tok for tok, _ in support))
        if vocab_size is None:
            vocab_size = max_tok + 1
        return cls(responses, vocab_size)

    def next_distribution(self, context: Sequence[int]) -> EmpiricalDistribution:
        dist = self._responses.get(tuple(context))
        if dist is None:
            raise KeyError(f"context {list(context)} not covered by offline responses")
        return dist
