"""Shared helpers for building tiny corpora and deterministic randomness."""

from __future__ import annotations

import json
import random
from pathlib import Path

import pytest

from tasc.corpus import Document, TaskCorpus

# filled by the @criterion decorator in test_acceptance.py
ACCEPTANCE_RESULTS: list[tuple[int, str, str, float]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, status, elapsed in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(
            f"ACCEPTANCE {number:02d} {title}: {status} ({elapsed:.1f}s)")


def make_corpus(outputs, inputs=None, id="test"):
    inputs = inputs or [""] * len(outputs)
    return TaskCorpus([Document(i, o) for i, o in zip(inputs, outputs)], id=id)


def write_jsonl_corpus(path: Path, pairs) -> Path:
    with open(path, "w", encoding="utf-8") as fh:
        for inp, out in pairs:
            fh.write(json.dumps({"input": inp, "output": out}) + "\n")
    return path


@pytest.fixture
def rng():
    return random.Random(0xC0FFEE)
