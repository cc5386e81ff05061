"""Auto-labeling toolkit for multilingual audio-visual speech corpora."""

from .backends import (
    BackendError,
    ExternalBackend,
    LanguagePrediction,
    ScriptedBackend,
    ScriptedEntry,
    Transcription,
    perturb_words,
)
from .bpe import BpeModel, BpeTokenizer, train_bpe
from .decoding import (
    BeamHypothesis,
    CtcPrefixScorer,
    EmissionMatrix,
    PositionalAttentionScorer,
    SeededAttentionScorer,
    UniformAttentionScorer,
    beam_search,
    ctc_prefix_score,
    exhaustive_decode,
    exhaustive_rank,
)
from .manifest import (
    AUTO,
    HUMAN,
    HoursReport,
    Manifest,
    ManifestError,
    Utterance,
    aggregate_hours,
    merge_pools,
    parse_manifest,
    write_manifest,
)
from .metrics import (
    Alignment,
    NormalizationPolicy,
    align,
    corpus_cer,
    corpus_wer,
    normalize_text,
)
from .pipeline import (
    LanguageProfile,
    PipelineResult,
    PipelineStats,
    RejectionRecord,
    default_profiles,
    filter_by_language,
    run_pipeline,
    validate_charset,
)
from .quality import QualityReport, preserved_ratio, report_from_counts, simulate_relabel

__version__ = "0.1.0"

__all__ = [
    "AUTO",
    "HUMAN",
    "Alignment",
    "BackendError",
    "BeamHypothesis",
    "BpeModel",
    "BpeTokenizer",
    "CtcPrefixScorer",
    "EmissionMatrix",
    "ExternalBackend",
    "HoursReport",
    "LanguagePrediction",
    "LanguageProfile",
    "Manifest",
    "ManifestError",
    "NormalizationPolicy",
    "PipelineResult",
    "PipelineStats",
    "PositionalAttentionScorer",
    "QualityReport",
    "RejectionRecord",
    "ScriptedBackend",
    "ScriptedEntry",
    "SeededAttentionScorer",
    "Transcription",
    "UniformAttentionScorer",
    "Utterance",
    "aggregate_hours",
    "align",
    "beam_search",
    "corpus_cer",
    "corpus_wer",
    "ctc_prefix_score",
    "default_profiles",
    "exhaustive_decode",
    "exhaustive_rank",
    "filter_by_language",
    "merge_pools",
    "normalize_text",
    "parse_manifest",
    "perturb_words",
    "preserved_ratio",
    "report_from_counts",
    "run_pipeline",
    "simulate_relabel",
    "train_bpe",
    "validate_charset",
    "write_manifest",
]
