"""Batch command-line front door.

Four subcommands: ``analyze`` (input/output variability report),
``augment`` (vocabulary enrichment plus compression report), ``simulate``
(speculative decoding against a reference target), and ``predict``
(entropy-runtime predictor statistics). Reports are machine-readable JSON
written to --outdir (or stdout), sweep tables are TSV, and each report
path renders a PNG figure next to its table unless --no-figures is given.
Human summaries go to stderr. Exit codes: 0 success, 1 invariant
violation, 2 input error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

from . import figures
from .corpus import CorpusError, TaskCorpus, load_corpus, tokenize_corpus
from .drafter import MixedDrafter, build_corpus_drafter, build_prompt_drafter, save_drafter
from .metrics import (
    EmpiricalDistribution,
    MetricsError,
    coverage_count,
    directional_success_rate,
    kendall_tau,
    load_predictor_series,
    normalized_entropy,
    renyi_entropy,
    variability_report,
    word_ngram_distribution,
)
from .specdec import (
    NGramTargetModel,
    OfflineTargetModel,
    OutputInvarianceError,
    RandomLogitTargetModel,
    build_report,
    check_output_invariance,
    generate,
    modeled_speedup,
    write_trace,
)
from .tokenizer import (
    AugmentationConfig,
    BPETokenizer,
    UnencodableError,
    Vocabulary,
    byte_vocabulary,
    compression_report,
    enrich_vocabulary,
    escape_bytes,
    load_vocabulary,
    save_vocabulary,
    whitespace_vocabulary,
)

EXIT_OK = 0
EXIT_INVARIANT = 1
EXIT_INPUT = 2

# config-file keys that do not match their argparse dest directly
_CONFIG_KEY_MAP = {"lambda": "corpus_weight", "gamma": "draft_len"}


@dataclass
class RunConfig:
    """Resolved invocation, echoed verbatim into every report."""

    command: str
    inputs: dict[str, str]
    params: dict[str, object]


def _say(message: str) -> None:
    print(message, file=sys.stderr)


def _apply_config_file(args: argparse.Namespace) -> None:
    """Values from --config override parsed flags."""
    if not getattr(args, "config", None):
        return
    overrides = json.loads(Path(args.config).read_text(encoding="utf-8"))
    if not isinstance(overrides, dict):
        raise ValueError("config file must hold a JSON object")
    for key, value in overrides.items():
        dest = key.replace("-", "_")
        dest = _CONFIG_KEY_MAP.get(dest, dest)
        if not hasattr(args, dest):
            raise ValueError(f"config key {key!r} does not match any flag")
        setattr(args, dest, value)


def _write_report(report: dict, outdir: Path | None, name: str = "report.json") -> None:
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if outdir is None:
        sys.stdout.write(text)
    else:
        (outdir / name).write_text(text, encoding="utf-8")


def _write_table(rows: list[dict], columns: list[str], path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(columns) + "\n")
        for row in rows:
            fh.write("\t".join(repr(row[c]) if isinstance(row[c], float) else str(row[c])
                               for c in columns) + "\n")


def _base_vocabulary(args: argparse.Namespace, corpus: TaskCorpus) -> Vocabulary:
    if getattr(args, "vocab", None):
        return load_vocabulary(args.vocab)
    if getattr(args, "bpe_vocab", None) or getattr(args, "bpe_merges", None):
        if not (args.bpe_vocab and args.bpe_merges):
            raise ValueError("--bpe-vocab and --bpe-merges must be given together")
        return Vocabulary(BPETokenizer.from_files(args.bpe_vocab, args.bpe_merges))
    if args.tokenizer == "byte":
        return byte_vocabulary()
    if args.tokenizer == "whitespace":
        return whitespace_vocabulary(corpus)
    raise ValueError(f"unknown tokenizer {args.tokenizer!r}")


def _parse_float_list(text: str) -> list[float]:
    return [float(part) for part in text.split(",") if part.strip() != ""]


def _parse_int_list(text: str) -> list[int]:
    return [int(part) for part in text.split(",") if part.strip() != ""]


# ---------------------------------------------------------------------------
# analyze
# ---------------------------------------------------------------------------

def cmd_analyze(args: argparse.Namespace) -> int:
    corpus = load_corpus(args.corpus, args.format)
    report = variability_report(corpus, n=args.ngram_n, normalization=args.normalization)
    body = asdict(report)
    body["ngram_order"] = args.ngram_n
    body["normalization"] = args.normalization
    if args.mass != 0.8:
        in_dist = word_ngram_distribution(corpus.texts("input"), args.ngram_n,
                                          args.normalization)
        out_dist = word_ngram_distribution(corpus.texts("output"), args.ngram_n,
                                           args.normalization)
        body["coverage_mass"] = args.mass
        body["input_cov_mass"] = coverage_count(in_dist, args.mass)
        body["output_cov_mass"] = coverage_count(out_dist, args.mass)

    config = RunConfig(command="analyze", inputs={"corpus": str(args.corpus)},
                       params={"format": args.format, "ngram_n": args.ngram_n,
                               "normalization": args.normalization, "mass": args.mass})
    outdir = _prepare_outdir(args)
    _write_report({"config": asdict(config), "report": body}, outdir)
    if outdir is not None and not args.no_figures:
        figures.save_variability_figure(report, outdir / "variability.png")
    _say(f"analyze: output entropy {report.output_entropy:.3f} bits vs input "
         f"{report.input_entropy:.3f} bits (delta {report.delta_pct:+.1%}); "
         f"cov80 {report.output_cov80} vs {report.input_cov80}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# augment
# ---------------------------------------------------------------------------

def _candidate_row(candidate, vocab: Vocabulary) -> dict:
    string = b"".join(vocab.token_string(t) for t in candidate.ngram)
    return {"ngram": list(candidate.ngram), "string": escape_bytes(string),
            "freq": candidate.freq, "reward": candidate.reward, "pcs": candidate.pcs}


def _token_stats(corpus: TaskCorpus, vocab: Vocabulary) -> dict:
    sequences = tokenize_corpus(corpus, vocab, "output")
    from collections import Counter
    counts = Counter(tok for seq in sequences for tok in seq)
    dist = EmpiricalDistribution.from_counts(counts)
    total_tokens = sum(len(s) for s in sequences)
    total_bytes = sum(len(t.encode("utf-8")) for t in corpus.texts("output"))
    return {
        "avg_len": total_tokens / len(sequences),
        "bytes_per_token": total_bytes / total_tokens,
        "normalized_entropy": normalized_entropy(dist, vocab.size),
        "h2": renyi_entropy(dist, 2.0),
    }


def cmd_augment(args: argparse.Namespace) -> int:
    corpus = load_corpus(args.corpus, args.format)
    base = _base_vocabulary(args, corpus)
    sweep = _parse_int_list(args.sweep) if args.sweep else None
    budget = args.budget
    if sweep:
        budget = max([*sweep, budget or 0])
    if not budget:
        raise ValueError("--budget (or a non-empty --sweep) is required")

    config = AugmentationConfig(budget=budget, max_order=args.n_max,
                                pcs_threshold=args.pcs_threshold,
                                recount_interval=args.recount_interval)
    result = enrich_vocabulary(corpus, base, config)
    comp = compression_report(corpus, base, result.vocab)

    body = {
        "added": len(result.accepted),
        "requested": budget,
        "exhausted": result.exhausted,
        "compression": asdict(comp),
        "accepted": [_candidate_row(c, result.vocab) for c in result.accepted],
        "rejected": [_candidate_row(c, result.vocab) for c in result.rejected],
    }
    run = RunConfig(command="augment", inputs={"corpus": str(args.corpus)},
                    params={"format": args.format, "budget": budget,
                            "n_max": args.n_max, "pcs_threshold": args.pcs_threshold,
                            "recount_interval": args.recount_interval,
                            "tokenizer": args.tokenizer, "sweep": sweep})
    outdir = _prepare_outdir(args)
    if outdir is not None:
        save_vocabulary(result.vocab, outdir / "enriched_vocab.json")
    _write_report({"config": asdict(run), "report": body}, outdir)

    if sweep:
        rows = []
        for m in sorted(set(sweep)):
            usable = min(m, len(result.accepted))
            stats = _token_stats(corpus, result.vocab.prefix(usable))
            rows.append({"budget": usable, **stats})
        if outdir is not None:
            _write_table(rows, ["budget", "avg_len", "bytes_per_token",
                                "normalized_entropy", "h2"], outdir / "sweep.tsv")
            if not args.no_figures:
                figures.save_budget_sweep_figure(rows, outdir / "sweep.png")

    flag = " (candidates exhausted)" if result.exhausted else ""
    _say(f"augment: added {len(result.accepted)}/{budget} tokens{flag}; "
         f"avg output length {comp.avg_len_before:.2f} -> {comp.avg_len_after:.2f} "
         f"(x{comp.compression_ratio:.2f})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def _build_target(args: argparse.Namespace, vocab: Vocabulary,
                  sequences: list[list[int]]):
    if args.target == "random":
        return RandomLogitTargetModel(vocab.size, seed=args.seed)
    if args.target == "offline":
        if not (args.offline_requests and args.offline_responses):
            raise ValueError("offline target needs --offline-requests and --offline-responses")
        return OfflineTargetModel.from_files(args.offline_requests, args.offline_responses,
                                             vocab_size=vocab.size)
    if args.target == "ngram":
        if args.target_corpus:
            held_out = load_corpus(args.target_corpus, args.format)
            target_seqs = tokenize_corpus(held_out, vocab, "output")
        else:
            target_seqs = sequences
        order = args.target_order or args.n_max + 1
        table = build_corpus_drafter(target_seqs, max_order=order, min_count=1,
                                     vocab_size=vocab.size)
        return NGramTargetModel(table)
    raise ValueError(f"unknown target kind {args.target!r}")


def _select_prompts(corpus: TaskCorpus, vocab: Vocabulary, count: int,
                    prefix_tokens: int) -> list[list[int]]:
    prompts = []
    for doc in corpus.documents[:count]:
        if doc.input_text:
            prompts.append(vocab.encode(doc.input_text))
        else:
            prompts.append(vocab.encode(doc.output_text)[:prefix_tokens])
    return prompts


def _run_sessions(target, corpus_drafter, prompts, args) -> tuple[list, list, int, int]:
    all_records = []
    sessions = []
    total_tokens = 0
    draft_calls = 0
    for prompt in prompts:
        prompt_drafter = build_prompt_drafter(prompt, max_order=args.n_max,
                                              refresh_enabled=not args.no_refresh)
        mixed = MixedDrafter(corpus=corpus_drafter, prompt=prompt_drafter,
                             corpus_weight=args.corpus_weight)
        out, report, records = generate(target, mixed, prompt,
                                        max_tokens=args.max_tokens,
                                        draft_len=args.draft_len,
                                        stop_token=args.stop_token)
        if args.oracle_check:
            check_output_invariance(target, out, prompt, args.max_tokens,
                                    args.stop_token)
        sessions.append((out, report, records))
        all_records.extend(records)
        total_tokens += report.total_tokens
        draft_calls += report.draft_calls
    return sessions, all_records, total_tokens, draft_calls


def cmd_simulate(args: argparse.Namespace) -> int:
    corpus = load_corpus(args.corpus, args.format)
    vocab = _base_vocabulary(args, corpus)
    sequences = tokenize_corpus(corpus, vocab, "output")
    corpus_drafter = build_corpus_drafter(sequences, max_order=args.n_max,
                                          min_count=args.p_min, vocab_size=vocab.size)
    target = _build_target(args, vocab, sequences)
    prompts = _select_prompts(corpus, vocab, args.num_prompts, args.prompt_tokens)
    if not prompts:
        raise ValueError("no prompts selected")

    sessions, all_records, total_tokens, draft_calls = _run_sessions(
        target, corpus_drafter, prompts, args)
    aggregate = build_report(all_records, args.draft_len, total_tokens, draft_calls)

    body = {
        "sessions": len(sessions),
        "total_tokens": aggregate.total_tokens,
        "target_passes": aggregate.target_passes,
        "tokens_per_pass": aggregate.tokens_per_pass,
        "acceptance_by_position": aggregate.acceptance_by_position,
        "first_position_rate": aggregate.first_position_rate,
        "draft_calls": aggregate.draft_calls,
        "modeled_speedup": modeled_speedup(aggregate, 1.0, args.cost_draft),
        "oracle_check": bool(args.oracle_check),
        "per_session": [
            {"tokens": r.total_tokens, "passes": r.target_passes,
             "tokens_per_pass": r.tokens_per_pass}
            for _, r, _ in sessions
        ],
    }
    run = RunConfig(command="simulate", inputs={"corpus": str(args.corpus)},
                    params={"format": args.format, "target": args.target,
                            "n_max": args.n_max, "p_min": args.p_min,
                            "lambda": args.corpus_weight, "gamma": args.draft_len,
                            "max_tokens": args.max_tokens, "seed": args.seed,
                            "num_prompts": args.num_prompts,
                            "stop_token": args.stop_token,
                            "cost_draft": args.cost_draft})
    outdir = _prepare_outdir(args)
    _write_report({"config": asdict(run), "report": body}, outdir)

    if outdir is not None:
        trace_dir = outdir / "traces"
        trace_dir.mkdir(exist_ok=True)
        for i, (_, _, records) in enumerate(sessions):
            write_trace(records, trace_dir / f"session_{i:03d}.jsonl")
        rows = [{"position": i + 1, "acceptance_rate": rate}
                for i, rate in enumerate(aggregate.acceptance_by_position)]
        _write_table(rows, ["position", "acceptance_rate"], outdir / "acceptance.tsv")
        save_drafter(corpus_drafter, outdir / "corpus_drafter.tasc-ngrams")
        if not args.no_figures:
            figures.save_acceptance_figure(aggregate.acceptance_by_position,
                                           outdir / "acceptance.png")

    if args.lambda_sweep:
        sweep_rows = []
        for weight in _parse_float_list(args.lambda_sweep):
            sweep_args = argparse.Namespace(**vars(args))
            sweep_args.corpus_weight = weight
            _, records, tokens, calls = _run_sessions(target, corpus_drafter,
                                                      prompts, sweep_args)
            rep = build_report(records, args.draft_len, tokens, calls)
            sweep_rows.append({"corpus_weight": weight,
                               "tokens_per_pass": rep.tokens_per_pass})
        if outdir is not None:
            _write_table(sweep_rows, ["corpus_weight", "tokens_per_pass"],
                         outdir / "lambda_sweep.tsv")
            if not args.no_figures:
                figures.save_lambda_sweep_figure(sweep_rows, outdir / "lambda_sweep.png")

    _say(f"simulate: {aggregate.total_tokens} tokens in {aggregate.target_passes} "
         f"target passes ({aggregate.tokens_per_pass:.2f} tokens/pass, "
         f"alpha={aggregate.first_position_rate:.2f})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# predict
# ---------------------------------------------------------------------------

def cmd_predict(args: argparse.Namespace) -> int:
    series = load_predictor_series(args.series)
    usable = {}
    excluded = []
    for config_id, points in sorted(series.groups.items()):
        if len(points) < 2:
            excluded.append(config_id)
            _say(f"predict: configuration {config_id!r} has a single point; excluded")
            continue
        usable[config_id] = points
    if not usable:
        raise MetricsError("no configuration has at least 2 points")
    trimmed = type(series)(groups=usable)

    per_config = {}
    for config_id in usable:
        tau, p_value = kendall_tau(trimmed, config_id)
        per_config[config_id] = {"tau": tau, "p_value": p_value,
                                 "points": len(usable[config_id])}
    rate, transitions = directional_success_rate(trimmed)

    body = {
        "configurations": per_config,
        "excluded": excluded,
        "directional_success_rate": rate,
        "transitions_used": transitions,
    }
    run = RunConfig(command="predict", inputs={"series": str(args.series)}, params={})
    outdir = _prepare_outdir(args)
    _write_report({"config": asdict(run), "report": body}, outdir)
    if outdir is not None:
        rows = [{"config_id": cid, "points": stats["points"], "tau": stats["tau"],
                 "p_value": stats["p_value"]} for cid, stats in sorted(per_config.items())]
        _write_table(rows, ["config_id", "points", "tau", "p_value"],
                     outdir / "predictor.tsv")
        if not args.no_figures:
            figures.save_predictor_figure(trimmed, outdir / "predictor.png")
    _say(f"predict: directional success {rate:.1%} over {transitions} transitions; "
         f"{len(per_config)} configurations")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _prepare_outdir(args: argparse.Namespace) -> Path | None:
    if not getattr(args, "outdir", None):
        return None
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    return outdir


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON file whose values override flags")
    parser.add_argument("--outdir", help="directory for reports, tables, and figures")
    parser.add_argument("--no-figures", action="store_true",
                        help="skip rendering PNG figures")
    parser.add_argument("--seed", type=int, default=0, help="fixes all randomness")


def _add_vocab_source(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--tokenizer", choices=["byte", "whitespace"], default="byte",
                        help="built-in base tokenizer")
    parser.add_argument("--vocab", help="tasc-vocab.v1 file to use as the base vocabulary")
    parser.add_argument("--bpe-vocab", help="BPE vocab file (one token per line)")
    parser.add_argument("--bpe-merges", help="BPE merges file (one rule per line)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tasc",
        description="Task-adaptive sequence compression toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="input/output word n-gram variability report")
    p.add_argument("corpus")
    p.add_argument("--format", choices=["tasc.v1", "plain"], default="tasc.v1")
    p.add_argument("--ngram-n", type=int, default=2)
    p.add_argument("--normalization", choices=["none", "lower", "lower+strip-punct"],
                   default="none")
    p.add_argument("--mass", type=float, default=0.8, help="coverage mass")
    _add_common(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("augment", help="enrich a vocabulary with task n-grams")
    p.add_argument("corpus")
    p.add_argument("--format", choices=["tasc.v1", "plain"], default="tasc.v1")
    p.add_argument("--budget", type=int, help="number of tokens to add")
    p.add_argument("--n-max", type=int, default=4, dest="n_max")
    p.add_argument("--pcs-threshold", type=float, default=0.1, dest="pcs_threshold")
    p.add_argument("--recount-interval", type=int, default=1, dest="recount_interval")
    p.add_argument("--sweep", help="comma-separated budgets for per-budget rows")
    _add_vocab_source(p)
    _add_common(p)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("simulate", help="speculative decoding against a reference target")
    p.add_argument("corpus")
    p.add_argument("--format", choices=["tasc.v1", "plain"], default="tasc.v1")
    p.add_argument("--target", choices=["ngram", "random", "offline"], default="ngram")
    p.add_argument("--target-corpus", dest="target_corpus",
                   help="held-out corpus for the n-gram target")
    p.add_argument("--target-order", type=int, dest="target_order",
                   help="n-gram target order (default: n_max + 1)")
    p.add_argument("--offline-requests", dest="offline_requests")
    p.add_argument("--offline-responses", dest="offline_responses")
    p.add_argument("--n-max", type=int, default=4, dest="n_max")
    p.add_argument("--p-min", type=int, default=5, dest="p_min")
    p.add_argument("--lambda", type=float, default=0.75, dest="corpus_weight",
                   help="corpus drafter mixture weight")
    p.add_argument("--gamma", type=int, default=8, dest="draft_len",
                   help="tokens drafted per verification step")
    p.add_argument("--max-tokens", type=int, default=64, dest="max_tokens")
    p.add_argument("--num-prompts", type=int, default=16, dest="num_prompts")
    p.add_argument("--prompt-tokens", type=int, default=8, dest="prompt_tokens",
                   help="output prefix length used when a document has no input")
    p.add_argument("--stop-token", type=int, dest="stop_token")
    p.add_argument("--no-refresh", action="store_true", dest="no_refresh",
                   help="do not feed accepted tokens back into the prompt drafter")
    p.add_argument("--oracle-check", action="store_true", dest="oracle_check",
                   help="assert output invariance against plain greedy decoding")
    p.add_argument("--lambda-sweep", dest="lambda_sweep",
                   help="comma-separated mixture weights for a sweep table")
    p.add_argument("--cost-draft", type=float, default=0.0, dest="cost_draft",
                   help="draft cost per call relative to one target pass")
    _add_vocab_source(p)
    _add_common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("predict", help="entropy-runtime predictor statistics")
    p.add_argument("series", help="delimited table of (config_id, M, h2, runtime) rows")
    _add_common(p)
    p.set_defaults(func=cmd_predict)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_config_file(args)
        return args.func(args)
    except OutputInvarianceError as exc:
        _say(f"tasc {args.command}: invariant violation: {exc}")
        return EXIT_INVARIANT
    except (CorpusError, MetricsError, UnencodableError, ValueError, KeyError,
            OSError, json.JSONDecodeError) as exc:
        _say(f"tasc {args.command}: error: {exc}")
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
