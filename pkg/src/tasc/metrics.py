"""Entropy and typicality diagnostics, plus the entropy-runtime predictor.

All entropies are reported in bits. Word-level reports split on whitespace
after an optional normalization pass and never form n-grams across
document boundaries. The predictor analysis relates the collision
(order-2) entropy of budget sweeps to recorded runtimes via Kendall's
tau-b and a directional success rate over consecutive budget transitions.
"""

from __future__ import annotations

import csv
import math
import string
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Hashable, Mapping, Sequence

from .corpus import TaskCorpus

__all__ = [
    "EmpiricalDistribution",
    "MetricsError",
    "PredictorSeries",
    "VariabilityReport",
    "coverage_count",
    "directional_success_rate",
    "kendall_tau",
    "load_predictor_series",
    "normalized_entropy",
    "renyi_entropy",
    "shannon_entropy",
    "variability_report",
    "word_ngram_distribution",
]


class MetricsError(ValueError):
    """Raised when a report cannot be computed from the given data."""


@dataclass
class EmpiricalDistribution:
    """Finite distribution as (item, probability) pairs.

    Probabilities must be non-negative and sum to 1 within 1e-9. The
    ``basis`` field declares the unit downstream entropy values use.
    """

    support: list[tuple[Hashable, float]]
    basis: str = "bits"

    def __post_init__(self):
        if not self.support:
            raise MetricsError("distribution support is empty")
        total = 0.0
        for item, p in self.support:
            if p < 0:
                raise MetricsError(f"negative probability {p} for {item!r}")
            total += p
        if abs(total - 1.0) > 1e-9:
            raise MetricsError(f"probabilities sum to {total}, not 1")

    @classmethod
    def from_counts(cls, counts: Mapping[Hashable, int | float]) -> "EmpiricalDistribution":
        """Normalize a count table; support sorted by descending count then key."""
        total = sum(counts.values())
        if total <= 0:
            raise MetricsError("count table is empty")
        items = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        return cls([(item, c / total) for item, c in items])

    def probabilities(self) -> list[float]:
        return [p for _, p in self.support]

    def as_dict(self) -> dict[Hashable, float]:
        return dict(self.support)


# ---------------------------------------------------------------------------
# Entropies and coverage
# ---------------------------------------------------------------------------

def shannon_entropy(dist: EmpiricalDistribution) -> float:
    """Plug-in Shannon entropy in bits; 0 log 0 counts as 0."""
    return -sum(p * math.log2(p) for p in dist.probabilities() if p > 0)


def renyi_entropy(dist: EmpiricalDistribution, alpha: float) -> float:
    """Order-alpha entropy in bits: log2(sum p^alpha) / (1 - alpha)."""
    if alpha <= 0 or alpha == 1:
        raise ValueError(f"alpha must be positive and != 1, got {alpha}")
    power_sum = sum(p ** alpha for p in dist.probabilities() if p > 0)
    return math.log2(power_sum) / (1.0 - alpha)


def normalized_entropy(dist: EmpiricalDistribution, vocab_size: int) -> float:
    """Shannon entropy divided by its maximum log2(vocab_size); in [0, 1]."""
    if vocab_size < len(dist.support):
        raise ValueError(
            f"vocab_size {vocab_size} smaller than support size {len(dist.support)}")
    if vocab_size == 1:
        return 0.0
    return shannon_entropy(dist) / math.log2(vocab_size)


def coverage_count(dist: EmpiricalDistribution, mass: float) -> int:
    """Smallest k such that the k most probable items reach the mass.

    Ties between equal probabilities are broken by item-key order. The
    comparison allows 1e-12 of float dust so that, e.g., eight exact
    tenths count as reaching 0.8.
    """
    if not 0.0 < mass <= 1.0:
        raise ValueError(f"mass must be in (0, 1], got {mass}")
    ranked = sorted(dist.support, key=lambda kv: (-kv[1], kv[0]))
    acc = 0.0
    for k, (_, p) in enumerate(ranked, start=1):
        acc += p
        if acc >= mass - 1e-12:
            return k
    return len(ranked)


# ---------------------------------------------------------------------------
# Word n-gram variability (input vs. output sides)
# ---------------------------------------------------------------------------

_PUNCT_TO_SPACE = str.maketrans({c: " " for c in string.punctuation})

NORMALIZATIONS = ("none", "lower", "lower+strip-punct")


def _normalize(text: str, mode: str) -> str:
    if mode == "none":
        return text
    if mode == "lower":
        return text.lower()
    if mode == "lower+strip-punct":
        return text.lower().translate(_PUNCT_TO_SPACE)
    raise ValueError(f"unknown normalization {mode!r}; expected one of {NORMALIZATIONS}")


def word_ngram_distribution(texts: Sequence[str], n: int,
                            normalization: str = "none") -> EmpiricalDistribution:
    """Empirical word n-gram distribution over whitespace-split texts."""
    if n < 1:
        raise ValueError("n must be >= 1")
    counts: Counter[tuple[str, ...]] = Counter()
    for text in texts:
        words = _normalize(text, normalization).split()
        for i in range(len(words) - n + 1):
            counts[tuple(words[i:i + n])] += 1
    if not counts:
        raise MetricsError(f"no word {n}-grams on this side")
    return EmpiricalDistribution.from_counts(counts)


@dataclass
class VariabilityReport:
    """Input-vs-output word n-gram comparison (entropy and 80% coverage)."""

    input_entropy: float
    output_entropy: float
    delta_pct: float
    input_cov80: int
    output_cov80: int
    cov_ratio: float


def variability_report(corpus: TaskCorpus, n: int = 2,
                       normalization: str = "none") -> VariabilityReport:
    """Compare word n-gram variability of the output side against the inputs."""
    input_dist = word_ngram_distribution(corpus.texts("input"), n, normalization)
    output_dist = word_ngram_distribution(corpus.texts("output"), n, normalization)
    h_in = shannon_entropy(input_dist)
    h_out = shannon_entropy(output_dist)
    if h_in > 0:
        delta = (h_out - h_in) / h_in
    else:
        delta = 0.0 if h_out == 0 else math.inf
    cov_in = coverage_count(input_dist, 0.8)
    cov_out = coverage_count(output_dist, 0.8)
    return VariabilityReport(
        input_entropy=h_in,
        output_entropy=h_out,
        delta_pct=delta,
        input_cov80=cov_in,
        output_cov80=cov_out,
        cov_ratio=cov_in / cov_out,
    )


# ---------------------------------------------------------------------------
# Predictor series: collision entropy vs. runtime
# ---------------------------------------------------------------------------

@dataclass
class PredictorSeries:
    """(budget, h2, runtime) points per configuration, budgets increasing."""

    groups: dict[str, list[tuple[int, float, float]]] = field(default_factory=dict)

    def __post_init__(self):
        for config, points in self.groups.items():
            budgets = [m for m, _, _ in points]
            if any(b <= a for a, b in zip(budgets, budgets[1:])):
                raise ValueError(f"budgets not strictly increasing in config {config!r}")


def load_predictor_series(path: str | Path) -> PredictorSeries:
    """Read a delimited table of (config_id, M, h2, runtime) rows.

    Tab-delimited for .tsv files, comma otherwise. A header row and
    '#'-prefixed comment lines are skipped. Rows are sorted by budget.
    """
    path = Path(path)
    delim = "\t" if path.suffix == ".tsv" else ","
    groups: dict[str, list[tuple[int, float, float]]] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        for rowno, row in enumerate(csv.reader(fh, delimiter=delim), start=1):
            if not row or row[0].startswith("#"):
                continue
            if len(row) != 4:
                raise ValueError(f"row {rowno}: expected 4 fields, got {len(row)}")
            config, m_str, h2_str, rt_str = (f.strip() for f in row)
            try:
                point = (int(m_str), float(h2_str), float(rt_str))
            except ValueError:
                if rowno == 1:  # header row
                    continue
                raise ValueError(f"row {rowno}: non-numeric fields") from None
            groups.setdefault(config, []).append(point)
    if not groups:
        raise ValueError(f"no data rows in {path}")
    for config, points in groups.items():
        points.sort(key=lambda p: p[0])
        budgets = [m for m, _, _ in points]
        if len(set(budgets)) != len(budgets):
            raise ValueError(f"duplicate budget in config {config!r}")
    return PredictorSeries(groups=groups)


def _pair_counts(x: Sequence[float], y: Sequence[float]) -> tuple[int, int, int, int]:
    """Concordant, discordant, x-tied, and y-tied pair counts."""
    conc = disc = ties_x = ties_y = 0
    n = len(x)
    for i in range(n):
        for j in range(i + 1, n):
            dx = x[i] - x[j]
            dy = y[i] - y[j]
            if dx == 0:
                ties_x += 1
                if dy == 0:
                    ties_y += 1
            elif dy == 0:
                ties_y += 1
            elif (dx > 0) == (dy > 0):
                conc += 1
            else:
                disc += 1
    return conc, disc, ties_x, ties_y


def _exact_two_sided_p(n: int, statistic: int) -> float:
    """P(|C - D| >= |statistic|) under random rankings, via the inversion
    number distribution (valid only without ties)."""
    # counts[k] = number of permutations of n items with k inversions
    counts = [1]
    for m in range(2, n + 1):
        prev = counts
        size = len(prev) + (m - 1)
        acc = [0] * (size + 1)
        run = 0
        for k in range(size):
            run += prev[k] if k < len(prev) else 0
            if k - m >= 0:
                run -= prev[k - m]
            acc[k] = run
        counts = acc[:size]
    n0 = n * (n - 1) // 2
    total = math.factorial(n)
    hits = sum(c for k, c in enumerate(counts) if abs(n0 - 2 * k) >= abs(statistic))
    return min(1.0, hits / total)


def _approx_two_sided_p(x: Sequence[float], y: Sequence[float], statistic: int) -> float:
    """Normal approximation with the standard tie-corrected variance."""
    n = len(x)
    tie_x = Counter(x)
    tie_y = Counter(y)
    xt = [t for t in tie_x.values() if t > 1]
    yt = [t for t in tie_y.values() if t > 1]
    v0 = n * (n - 1) * (2 * n + 5)
    vt = sum(t * (t - 1) * (2 * t + 5) for t in xt)
    vu = sum(u * (u - 1) * (2 * u + 5) for u in yt)
    v1 = (sum(t * (t - 1) for t in xt) * sum(u * (u - 1) for u in yt)) / (2 * n * (n - 1))
    v2 = (sum(t * (t - 1) * (t - 2) for t in xt) * sum(u * (u - 1) * (u - 2) for u in yt)
          ) / (9 * n * (n - 1) * (n - 2))
    var = (v0 - vt - vu) / 18 + v1 + v2
    if var <= 0:
        return 1.0
    z = statistic / math.sqrt(var)
    return math.erfc(abs(z) / math.sqrt(2))


def kendall_tau(series: PredictorSeries, config: str) -> tuple[float, float]:
    """Tie-corrected Kendall tau-b between h2 and runtime for one config.

    The two-sided p-value uses the exact permutation distribution for up
    to 10 untied points and the normal approximation otherwise.
    """
    points = series.groups.get(config)
    if points is None:
        raise KeyError(f"unknown configuration {config!r}")
    if len(points) < 2:
        raise MetricsError(f"configuration {config!r} has fewer than 2 points")
    h2 = [p[1] for p in points]
    runtime = [p[2] for p in points]
    conc, disc, ties_x, ties_y = _pair_counts(h2, runtime)
    n = len(points)
    n0 = n * (n - 1) // 2
    denom = math.sqrt((n0 - ties_x) * (n0 - ties_y))
    if denom == 0:
        raise MetricsError(f"configuration {config!r} is fully tied on one variable")
    tau = (conc - disc) / denom
    if n <= 10 and ties_x == 0 and ties_y == 0:
        p_value = _exact_two_sided_p(n, conc - disc)
    else:
        p_value = _approx_two_sided_p(h2, runtime, conc - disc)
    return tau, p_value


def directional_success_rate(series: PredictorSeries) -> tuple[float, int]:
    """Fraction of within-config budget steps where rising h2 met falling
    runtime, over the steps with rising h2. Returns (rate, steps used)."""
    qualifying = 0
    successes = 0
    for points in series.groups.values():
        for (_, h2_a, rt_a), (_, h2_b, rt_b) in zip(points, points[1:]):
            if h2_b - h2_a > 0:
                qualifying += 1
                if rt_b - rt_a < 0:
                    successes += 1
    if qualifying == 0:
        raise MetricsError("no transitions with increasing h2")
    return successes / qualifying, qualifying
