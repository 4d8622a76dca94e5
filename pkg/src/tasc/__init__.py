"""Task-adaptive sequence compression toolkit.

Three capabilities built on one observation, that constrained generation
tasks concentrate their output n-grams: enriching a tokenizer vocabulary
with high-value task n-grams to shorten outputs, building training-free
n-gram draft models for speculative decoding, and the entropy diagnostics
that quantify when either will pay off.
"""

from .corpus import (
    CorpusError,
    Document,
    NGramCounts,
    TaskCorpus,
    count_ngrams,
    load_corpus,
    save_corpus,
    tokenize_corpus,
)
from .drafter import (
    CorpusDrafter,
    MixedDrafter,
    NGramModel,
    PromptDrafter,
    build_corpus_drafter,
    build_prompt_drafter,
    draft,
    drafter_distribution,
    greedy_token,
    load_drafter,
    mixed_distribution,
    refresh_prompt_drafter,
    save_drafter,
)
from .metrics import (
    EmpiricalDistribution,
    MetricsError,
    PredictorSeries,
    VariabilityReport,
    coverage_count,
    directional_success_rate,
    kendall_tau,
    load_predictor_series,
    normalized_entropy,
    renyi_entropy,
    shannon_entropy,
    variability_report,
)
from .specdec import (
    AccelerationReport,
    NGramTargetModel,
    OfflineTargetModel,
    OutputInvarianceError,
    RandomLogitTargetModel,
    StepRecord,
    TargetModel,
    acceptance_by_position,
    check_output_invariance,
    generate,
    greedy_decode,
    modeled_speedup,
    verify,
)
from .tokenizer import (
    AddedToken,
    AugmentationConfig,
    BPETokenizer,
    ByteTokenizer,
    CompressionReport,
    EmbeddingMatrix,
    EnrichmentResult,
    MergeCandidate,
    UnencodableError,
    Vocabulary,
    WhitespaceTokenizer,
    byte_vocabulary,
    compression_report,
    enrich_vocabulary,
    init_embeddings,
    load_embeddings,
    load_vocabulary,
    merge_reward,
    prefix_collision_score,
    save_embeddings,
    save_vocabulary,
    whitespace_vocabulary,
)

__version__ = "0.1.0"
