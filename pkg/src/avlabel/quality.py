"""Labeling-quality analysis: preserved ratio and labeling WER.

The core experiment: take a gold-labeled corpus, strip its labels, run the
auto-labeling pipeline over the stripped copy, and compare what comes back
against the gold labels. Preserved ratio measures how much data survives
the filters; labeling WER measures how close the automatic transcripts are
on what survived.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Mapping

from .backends import Backend
from .manifest import Manifest, language_sort_key, round_half_up
from .metrics import DEFAULT_POLICY, NormalizationPolicy, corpus_wer
from .pipeline import LanguageProfile, PipelineResult, run_pipeline


def preserved_ratio(gold_count: int, auto_count: int) -> float:
    """Percentage of gold utterances surviving auto-labeling, one decimal."""
    if gold_count <= 0:
        raise ValueError(f"gold_count must be positive, got {gold_count}")
    if not 0 <= auto_count <= gold_count:
        raise ValueError(
            f"auto_count must be in [0, gold_count], got {auto_count} of {gold_count}"
        )
    return round_half_up(100.0 * auto_count / gold_count, 1)


@dataclass(frozen=True)
class QualityRow:
    """One language's outcome: survival count and transcript accuracy."""

    lang: str
    gold_count: int
    auto_count: int
    preserved_ratio_pct: float
    labeling_wer_pct: float | None  # None when nothing was kept to score


@dataclass(frozen=True)
class QualityReport:
    """Per-language preserved ratio and labeling WER, render-stable."""

    rows: tuple[QualityRow, ...]

    def row(self, lang: str) -> QualityRow:
        for r in self.rows:
            if r.lang == lang:
                return r
        raise KeyError(lang)

    def to_record(self) -> dict:
        return {
            "rows": [
                {
                    "lang": r.lang,
                    "gold_count": r.gold_count,
                    "auto_count": r.auto_count,
                    "preserved_ratio_pct": r.preserved_ratio_pct,
                    "labeling_wer_pct": r.labeling_wer_pct,
                }
                for r in self.rows
            ]
        }

    def render(self) -> str:
        lines = [
            f"{'Language':<10} {'Gold':>10} {'Auto':>10} "
            f"{'Preserved (%)':>14} {'Labeling WER (%)':>17}"
        ]
        for r in self.rows:
            wer = "n/a" if r.labeling_wer_pct is None else f"{r.labeling_wer_pct:.2f}"
            lines.append(
                f"{r.lang:<10} {r.gold_count:>10,} {r.auto_count:>10,} "
                f"{r.preserved_ratio_pct:>14.1f} {wer:>17}"
            )
        return "\n".join(lines) + "\n"


def report_from_counts(counts: Mapping[str, tuple[int, int]]) -> QualityReport:
    """Report built from pre-tallied (gold_count, auto_count) pairs alone.

    Covers the case where only the survival counts are known (no transcript
    pairs), so the labeling WER column is n/a.
    """
    rows = []
    for lang in sorted(counts, key=language_sort_key):
        gold_count, auto_count = counts[lang]
        rows.append(
            QualityRow(
                lang=lang,
                gold_count=gold_count,
                auto_count=auto_count,
                preserved_ratio_pct=preserved_ratio(gold_count, auto_count),
                labeling_wer_pct=None,
            )
        )
    return QualityReport(tuple(rows))


@dataclass(frozen=True)
class SimulationOutcome:
    """Relabeling run artifacts: the pipeline result plus the quality report."""

    pipeline: PipelineResult
    report: QualityReport


def simulate_relabel(
    gold: Manifest,
    id_backend: Backend,
    asr_backend: Backend,
    targets: Iterable[str],
    profiles: Mapping[str, LanguageProfile],
    parallelism: int = 4,
    min_confidence: float | None = None,
    policy: NormalizationPolicy = DEFAULT_POLICY,
) -> SimulationOutcome:
    """Strip a gold corpus of its labels, re-label it, and score the result.

    Rows are grouped by gold language, so auto_count never exceeds
    gold_count: a kept utterance counts for the language it truly belongs
    to, even if the filter bucketed it elsewhere (its transcript pair then
    lands in its gold language's WER, where a cross-language transcript
    scores honestly badly). Labeling WER covers kept utterances only;
    rejected ones have no hypothesis, and their cost is already visible in
    the preserved ratio.
    """
    for utt in gold:
        if utt.gold_lang is None or utt.gold_text is None:
            raise ValueError(f"utterance {utt.id!r} lacks gold_lang/gold_text")

    stripped = Manifest(
        tuple(
            replace(u, gold_lang=None, gold_text=None, auto_lang=None, auto_text=None)
            for u in gold
        ),
        provenance=gold.provenance,
    )
    result = run_pipeline(
        stripped,
        targets,
        id_backend,
        asr_backend,
        profiles,
        parallelism=parallelism,
        min_confidence=min_confidence,
    )

    kept_by_id = {}
    for manifest in result.manifests.values():
        for utt in manifest:
            kept_by_id[utt.id] = utt

    gold_langs = sorted({u.gold_lang for u in gold}, key=language_sort_key)
    rows = []
    for lang in gold_langs:
        gold_utts = [u for u in gold if u.gold_lang == lang]
        pairs = [
            (u.gold_text, kept_by_id[u.id].auto_text)
            for u in gold_utts
            if u.id in kept_by_id
        ]
        auto_count = len(pairs)
        wer = None
        if auto_count:
            wer = round_half_up(corpus_wer(pairs, policy).percent, 2)
        rows.append(
            QualityRow(
                lang=lang,
                gold_count=len(gold_utts),
                auto_count=auto_count,
                preserved_ratio_pct=preserved_ratio(len(gold_utts), auto_count),
                labeling_wer_pct=wer,
            )
        )
    return SimulationOutcome(pipeline=result, report=QualityReport(tuple(rows)))
