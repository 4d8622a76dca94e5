"""Render report tables to static figure files.

Every CLI report path pairs its delimited table with a PNG rendered here.
All rendering uses the Agg backend; nothing is ever shown interactively.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .metrics import PredictorSeries, VariabilityReport  # noqa: E402


def save_budget_sweep_figure(rows: Sequence[Mapping[str, float]], path: str | Path) -> None:
    """Compression and token-entropy curves against the token budget."""
    budgets = [r["budget"] for r in rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax1.plot(budgets, [r["avg_len"] for r in rows], marker="o", label="avg tokens/output")
    ax1.plot(budgets, [r["bytes_per_token"] for r in rows], marker="s", label="bytes/token")
    ax1.set_xlabel("added tokens")
    ax1.legend()
    ax1.set_title("output compression")
    ax2.plot(budgets, [r["normalized_entropy"] for r in rows], marker="o",
             label="normalized entropy")
    ax2.plot(budgets, [r["h2"] for r in rows], marker="s", label="collision entropy (bits)")
    ax2.set_xlabel("added tokens")
    ax2.legend()
    ax2.set_title("token distribution")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_acceptance_figure(rates: Sequence[float], path: str | Path) -> None:
    """Acceptance rate per speculated position."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(range(1, len(rates) + 1), rates, marker="o")
    ax.set_xlabel("speculated position")
    ax.set_ylabel("acceptance rate")
    ax.set_ylim(0, 1.05)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_lambda_sweep_figure(rows: Sequence[Mapping[str, float]], path: str | Path) -> None:
    """Tokens-per-pass against the corpus mixture weight."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot([r["corpus_weight"] for r in rows], [r["tokens_per_pass"] for r in rows],
            marker="o")
    ax.set_xlabel("corpus weight")
    ax.set_ylabel("tokens per target pass")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_predictor_figure(series: PredictorSeries, path: str | Path) -> None:
    """Runtime against collision entropy, one line per configuration."""
    fig, ax = plt.subplots(figsize=(5.5, 4))
    for config, points in sorted(series.groups.items()):
        h2 = [p[1] for p in points]
        runtime = [p[2] for p in points]
        ax.plot(h2, runtime, marker="o", label=config)
    ax.set_xlabel("collision entropy (bits)")
    ax.set_ylabel("runtime")
    if len(series.groups) <= 12:
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_variability_figure(report: VariabilityReport, path: str | Path) -> None:
    """Side-by-side input/output entropy and 80%-coverage bars."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 3.5))
    ax1.bar(["input", "output"], [report.input_entropy, report.output_entropy],
            color=["tab:blue", "tab:orange"])
    ax1.set_ylabel("word n-gram entropy (bits)")
    ax2.bar(["input", "output"], [report.input_cov80, report.output_cov80],
            color=["tab:blue", "tab:orange"])
    ax2.set_ylabel("n-grams covering 80% mass")
    ax2.set_yscale("log")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
