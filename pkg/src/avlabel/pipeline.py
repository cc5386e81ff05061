"""Auto-labeling pipeline: language-ID filtering, transcription, charset checks.

Each pool utterance flows through three gates: keep only target-language
predictions (exact tag match), transcribe with the predicted tag, then drop
transcripts containing letters outside the language's inventory. Every
dropped utterance yields exactly one rejection record naming the gate.
"""

from __future__ import annotations

import json
import unicodedata
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Iterable, Mapping

from .backends import Backend, BackendError
from .manifest import Manifest, Utterance, language_sort_key

STAGE_LANG_FILTER = "lang_filter"
STAGE_CHARSET = "charset"
STAGE_EMPTY_TEXT = "empty_text"
STAGES = (STAGE_LANG_FILTER, STAGE_CHARSET, STAGE_EMPTY_TEXT)

_ASCII_LETTERS = "abcdefghijklmnopqrstuvwxyz"

# Accented-letter inventories per standard orthography. The base a-z set is
# shared; these are config-overridable since orthography choice is a policy,
# not a measurement.
DEFAULT_EXTRA_LETTERS = {
    "fr": "àâæçéèêëîïôöœùûüÿ",
    "it": "àèéìíîòóùú",
    "es": "áéíóúüñ",
    "pt": "áâãàçéêíóôõú",
}

_LANGUAGE_NAMES = {"fr": "French", "it": "Italian", "es": "Spanish", "pt": "Portuguese"}


@dataclass(frozen=True)
class LanguageProfile:
    """A language tag plus the letters its transcripts may contain."""

    lang: str
    letters: frozenset[str]
    name: str = ""

    def __post_init__(self) -> None:
        if not self.lang:
            raise ValueError("profile language tag must be non-empty")
        if not self.letters:
            raise ValueError(f"profile {self.lang!r} has an empty letter inventory")
        object.__setattr__(self, "letters", frozenset(self.letters))
        for ch in self.letters:
            if (
                len(ch) != 1
                or unicodedata.category(ch)[0] != "L"
                or ch != ch.lower()
                or ch != unicodedata.normalize("NFC", ch)
            ):
                raise ValueError(
                    f"profile {self.lang!r}: inventory entries must be single "
                    f"lowercase NFC letters, got {ch!r}"
                )


def make_profile(lang: str, extra_letters: str = "", name: str = "") -> LanguageProfile:
    """Profile with the shared a-z base plus language-specific letters."""
    return LanguageProfile(
        lang=lang,
        letters=frozenset(_ASCII_LETTERS) | frozenset(extra_letters),
        name=name or _LANGUAGE_NAMES.get(lang, lang),
    )


def default_profiles() -> dict[str, LanguageProfile]:
    return {
        lang: make_profile(lang, extra) for lang, extra in DEFAULT_EXTRA_LETTERS.items()
    }


@dataclass(frozen=True)
class RejectionRecord:
    """Why one utterance was dropped: the gate and a human-readable detail."""

    id: str
    stage: str
    detail: str

    def __post_init__(self) -> None:
        if self.stage not in STAGES:
            raise ValueError(f"unknown rejection stage {self.stage!r}")


def write_rejections(records: Iterable[RejectionRecord]) -> str:
    lines = [
        json.dumps({"id": r.id, "stage": r.stage, "detail": r.detail}, ensure_ascii=False)
        for r in records
    ]
    if not lines:
        return ""
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class CharsetVerdict:
    """Outcome of transcript validation against a letter inventory."""

    accepted: bool
    stage: str | None = None
    offending: tuple[str, ...] = ()


def validate_charset(text: str, profile: LanguageProfile) -> CharsetVerdict:
    """Check that every letter of ``text`` belongs to the profile inventory.

    Digits, whitespace, and punctuation are ignored; letters are lowercased
    (and the result NFC-normalized) before lookup. Text with no content at
    all is an empty-text rejection; text whose letters all pass, or that has
    no letters, is accepted. Total function: never raises.
    """
    normalized = unicodedata.normalize("NFC", text)
    if not normalized.strip():
        return CharsetVerdict(accepted=False, stage=STAGE_EMPTY_TEXT)
    offending: set[str] = set()
    for ch in normalized:
        if unicodedata.category(ch)[0] != "L":
            continue
        for low in unicodedata.normalize("NFC", ch.lower()):
            if unicodedata.category(low)[0] == "L" and low not in profile.letters:
                offending.add(low)
    if offending:
        return CharsetVerdict(
            accepted=False, stage=STAGE_CHARSET, offending=tuple(sorted(offending))
        )
    return CharsetVerdict(accepted=True)


@dataclass(frozen=True)
class LanguageFunnel:
    """Per-language counts through the pipeline gates, plus kept hours.

    ``input_count`` is the whole pool (utterances are untagged before
    language ID, so the funnel top is shared by every language).
    """

    input_count: int
    lang_id_kept: int
    charset_kept: int
    final_count: int
    hours: float

    def __post_init__(self) -> None:
        chain = (self.input_count, self.lang_id_kept, self.charset_kept, self.final_count)
        if any(c < 0 for c in chain):
            raise ValueError(f"funnel counts must be non-negative: {chain}")
        if not (chain[0] >= chain[1] >= chain[2] >= chain[3]):
            raise ValueError(f"funnel counts must be non-increasing: {chain}")


@dataclass(frozen=True)
class PipelineStats:
    """Machine-readable accounting for one pipeline run.

    Construction checks the partition property: kept plus rejected equals
    the input pool size.
    """

    input_count: int
    per_language: dict[str, LanguageFunnel]
    rejected_by_stage: dict[str, int]

    def __post_init__(self) -> None:
        kept = sum(f.final_count for f in self.per_language.values())
        rejected = sum(self.rejected_by_stage.values())
        if kept + rejected != self.input_count:
            raise ValueError(
                f"stats do not partition the pool: {kept} kept + {rejected} "
                f"rejected != {self.input_count} input"
            )

    @property
    def total_kept(self) -> int:
        return sum(f.final_count for f in self.per_language.values())

    @property
    def total_rejected(self) -> int:
        return sum(self.rejected_by_stage.values())

    def to_record(self) -> dict:
        return {
            "input_count": self.input_count,
            "per_language": {
                lang: {
                    "input_count": f.input_count,
                    "lang_id_kept": f.lang_id_kept,
                    "charset_kept": f.charset_kept,
                    "final_count": f.final_count,
                    "hours": f.hours,
                }
                for lang, f in self.per_language.items()
            },
            "rejected_by_stage": {stage: self.rejected_by_stage.get(stage, 0) for stage in STAGES},
            "total_kept": self.total_kept,
            "total_rejected": self.total_rejected,
        }


@dataclass(frozen=True)
class PipelineResult:
    """Everything one run produces: per-language manifests, stats, rejections."""

    manifests: dict[str, Manifest]
    stats: PipelineStats
    rejections: tuple[RejectionRecord, ...]


@dataclass(frozen=True)
class _Outcome:
    utterance: Utterance
    kept: bool
    lang: str | None = None
    passed_lang_id: bool = False
    rejection: RejectionRecord | None = None


def _process_one(
    utt: Utterance,
    targets: frozenset[str],
    id_backend: Backend,
    asr_backend: Backend,
    profiles: Mapping[str, LanguageProfile],
    min_confidence: float | None,
) -> _Outcome:
    try:
        prediction = id_backend.identify_language(utt)
    except BackendError:
        return _Outcome(
            utt, kept=False,
            rejection=RejectionRecord(utt.id, STAGE_LANG_FILTER, "backend_error"),
        )
    if min_confidence is not None and prediction.confidence < min_confidence:
        return _Outcome(
            utt, kept=False,
            rejection=RejectionRecord(
                utt.id, STAGE_LANG_FILTER,
                f"confidence {prediction.confidence:.4f} below {min_confidence}",
            ),
        )
    if prediction.lang not in targets:
        return _Outcome(
            utt, kept=False,
            rejection=RejectionRecord(
                utt.id, STAGE_LANG_FILTER, f"predicted {prediction.lang}"
            ),
        )
    lang = prediction.lang
    try:
        transcription = asr_backend.transcribe(utt, lang)
    except BackendError:
        return _Outcome(
            utt, kept=False, lang=lang, passed_lang_id=True,
            rejection=RejectionRecord(utt.id, STAGE_EMPTY_TEXT, "backend_error"),
        )
    verdict = validate_charset(transcription.text, profiles[lang])
    if not verdict.accepted:
        detail = ",".join(verdict.offending) if verdict.offending else "empty transcription"
        return _Outcome(
            utt, kept=False, lang=lang, passed_lang_id=True,
            rejection=RejectionRecord(utt.id, verdict.stage, detail),
        )
    labeled = replace(utt, auto_lang=lang, auto_text=transcription.text)
    return _Outcome(labeled, kept=True, lang=lang, passed_lang_id=True)


def run_pipeline(
    pool: Manifest,
    targets: Iterable[str],
    id_backend: Backend,
    asr_backend: Backend,
    profiles: Mapping[str, LanguageProfile],
    parallelism: int = 4,
    min_confidence: float | None = None,
) -> PipelineResult:
    """Label a pool: language-ID filter, transcribe, charset-validate.

    Utterances are processed independently (with at most ``parallelism``
    concurrent backend calls); per-utterance backend failures become
    rejections, never a run abort. Kept utterances get auto_lang/auto_text
    set. Output manifests and rejections are sorted by utterance id, so
    results do not depend on scheduling.
    """
    target_set = frozenset(targets)
    if not target_set:
        raise ValueError("targets must be non-empty")
    missing = sorted(target_set - set(profiles))
    if missing:
        raise ValueError(f"no language profile for target(s): {', '.join(missing)}")
    if parallelism < 1:
        raise ValueError(f"parallelism must be >= 1, got {parallelism}")

    with ThreadPoolExecutor(max_workers=parallelism) as pool_exec:
        outcomes = list(
            pool_exec.map(
                lambda u: _process_one(
                    u, target_set, id_backend, asr_backend, profiles, min_confidence
                ),
                pool.utterances,
            )
        )

    langs = sorted(target_set, key=language_sort_key)
    kept: dict[str, list[Utterance]] = {lang: [] for lang in langs}
    lang_id_kept = {lang: 0 for lang in langs}
    rejected_by_stage = {stage: 0 for stage in STAGES}
    rejections: list[RejectionRecord] = []
    for outcome in outcomes:
        if outcome.passed_lang_id and outcome.lang is not None:
            lang_id_kept[outcome.lang] += 1
        if outcome.kept:
            assert outcome.lang is not None
            kept[outcome.lang].append(outcome.utterance)
        else:
            assert outcome.rejection is not None
            rejections.append(outcome.rejection)
            rejected_by_stage[outcome.rejection.stage] += 1

    manifests = {
        lang: Manifest(
            tuple(sorted(kept[lang], key=lambda u: u.id)), provenance=pool.provenance
        )
        for lang in langs
    }
    per_language = {}
    for lang in langs:
        final = len(manifests[lang])
        hours = sum(u.duration_s or 0.0 for u in manifests[lang]) / 3600.0
        per_language[lang] = LanguageFunnel(
            input_count=len(pool),
            lang_id_kept=lang_id_kept[lang],
            charset_kept=final,
            final_count=final,
            hours=hours,
        )
    stats = PipelineStats(
        input_count=len(pool),
        per_language=per_language,
        rejected_by_stage=rejected_by_stage,
    )
    rejections.sort(key=lambda r: r.id)
    return PipelineResult(manifests=manifests, stats=stats, rejections=tuple(rejections))


def filter_by_language(
    pool: Manifest,
    targets: Iterable[str],
    id_backend: Backend,
    min_confidence: float | None = None,
) -> tuple[dict[str, Manifest], tuple[RejectionRecord, ...]]:
    """Bucket a pool by predicted language, exact tag match only.

    A related-but-different tag (a "gl" prediction against an "es" target)
    is rejected, never coerced into a bucket. Backend failures reject the
    utterance with detail "backend_error". Buckets preserve pool order and
    include every target, possibly empty.
    """
    target_set = frozenset(targets)
    if not target_set:
        raise ValueError("targets must be non-empty")
    langs = sorted(target_set, key=language_sort_key)
    buckets: dict[str, list[Utterance]] = {lang: [] for lang in langs}
    rejections: list[RejectionRecord] = []
    for utt in pool:
        try:
            prediction = id_backend.identify_language(utt)
        except BackendError:
            rejections.append(RejectionRecord(utt.id, STAGE_LANG_FILTER, "backend_error"))
            continue
        if min_confidence is not None and prediction.confidence < min_confidence:
            rejections.append(
                RejectionRecord(
                    utt.id, STAGE_LANG_FILTER,
                    f"confidence {prediction.confidence:.4f} below {min_confidence}",
                )
            )
            continue
        if prediction.lang not in target_set:
            rejections.append(
                RejectionRecord(utt.id, STAGE_LANG_FILTER, f"predicted {prediction.lang}")
            )
            continue
        buckets[prediction.lang].append(utt)
    manifests = {
        lang: Manifest(tuple(buckets[lang]), provenance=pool.provenance) for lang in langs
    }
    return manifests, tuple(rejections)
