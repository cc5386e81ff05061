"""Corpus manifests: utterance records, JSONL serialization, pool merging, hour accounting.

A manifest is a UTF-8 JSON Lines file with one utterance per line, so pools
of millions of rows can be streamed without a full in-memory parse. Field
names are part of the wire format and must not be renamed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from decimal import ROUND_HALF_UP, Decimal
from typing import Iterable, Iterator

# Serialized field order; anything else on a record is carried opaquely.
CANONICAL_FIELDS = (
    "id",
    "media_ref",
    "duration_s",
    "gold_lang",
    "gold_text",
    "auto_lang",
    "auto_text",
    "source_dataset",
)

_REQUIRED_FIELDS = ("id", "media_ref", "source_dataset")
_OPTIONAL_TEXT_FIELDS = ("gold_lang", "gold_text", "auto_lang", "auto_text")

# Display order for per-language reporting; unknown tags sort after these.
LANGUAGE_ORDER = ("fr", "it", "es", "pt")

HUMAN = "human"
AUTO = "auto"


class ManifestError(ValueError):
    """Malformed manifest input or a violated manifest invariant."""


def round_half_up(value: float, decimals: int = 0) -> float:
    """Round with ties away from zero (display rounding; 0.5 -> 1, 99.65 -> 99.7)."""
    quantum = Decimal(1).scaleb(-decimals)
    return float(Decimal(repr(value)).quantize(quantum, rounding=ROUND_HALF_UP))


def language_sort_key(lang: str) -> tuple[int, str]:
    try:
        return (LANGUAGE_ORDER.index(lang), lang)
    except ValueError:
        return (len(LANGUAGE_ORDER), lang)


@dataclass(frozen=True)
class Utterance:
    """One pool item: a media reference plus whatever labels are known for it."""

    id: str
    media_ref: str
    source_dataset: str
    duration_s: float | None = None
    gold_lang: str | None = None
    gold_text: str | None = None
    auto_lang: str | None = None
    auto_text: str | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("utterance id must be non-empty")
        if self.duration_s is not None and not self.duration_s >= 0:
            raise ValueError(f"duration_s must be >= 0, got {self.duration_s!r}")
        if self.auto_text is not None and self.auto_lang is None:
            raise ValueError(f"utterance {self.id!r} has auto_text but no auto_lang")

    @classmethod
    def from_record(cls, record: dict) -> "Utterance":
        for name in _REQUIRED_FIELDS:
            if name not in record:
                raise ValueError(f"missing required field {name!r}")
            if not isinstance(record[name], str):
                raise ValueError(f"field {name!r} must be a string")
        duration = record.get("duration_s")
        if duration is not None:
            if isinstance(duration, bool) or not isinstance(duration, (int, float)):
                raise ValueError(f"duration_s must be a number, got {duration!r}")
            duration = float(duration)
        fields: dict = {}
        for name in _OPTIONAL_TEXT_FIELDS:
            value = record.get(name)
            if value is not None and not isinstance(value, str):
                raise ValueError(f"field {name!r} must be a string")
            fields[name] = value
        extra = {k: v for k, v in record.items() if k not in CANONICAL_FIELDS}
        return cls(
            id=record["id"],
            media_ref=record["media_ref"],
            source_dataset=record["source_dataset"],
            duration_s=duration,
            extra=extra,
            **fields,
        )

    def to_record(self) -> dict:
        record: dict = {}
        for name in CANONICAL_FIELDS:
            value = getattr(self, name)
            if value is not None:
                record[name] = value
        record.update(self.extra)
        return record


@dataclass(frozen=True)
class Manifest:
    """An ordered, immutable collection of utterances with a provenance tag."""

    utterances: tuple[Utterance, ...] = ()
    provenance: str = ""

    def __post_init__(self) -> None:
        if not isinstance(self.utterances, tuple):
            object.__setattr__(self, "utterances", tuple(self.utterances))
        seen: set[str] = set()
        for utt in self.utterances:
            if utt.id in seen:
                raise ManifestError(f"duplicate utterance id {utt.id!r}")
            seen.add(utt.id)

    def __len__(self) -> int:
        return len(self.utterances)

    def __iter__(self) -> Iterator[Utterance]:
        return iter(self.utterances)

    def by_id(self) -> dict[str, Utterance]:
        return {utt.id: utt for utt in self.utterances}


def parse_manifest(lines: Iterable[str], provenance: str = "") -> Manifest:
    """Parse JSON Lines into a Manifest, preserving input order.

    Blank lines are skipped. Errors name the offending 1-based line number;
    a duplicate id names both occurrences.
    """
    utterances: list[Utterance] = []
    first_seen: dict[str, int] = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"line {lineno}: invalid JSON: {exc}") from exc
        if not isinstance(record, dict):
            raise ManifestError(f"line {lineno}: expected a JSON object")
        try:
            utt = Utterance.from_record(record)
        except ValueError as exc:
            raise ManifestError(f"line {lineno}: {exc}") from exc
        if utt.id in first_seen:
            raise ManifestError(
                f"duplicate utterance id {utt.id!r}: lines {first_seen[utt.id]} and {lineno}"
            )
        first_seen[utt.id] = lineno
        utterances.append(utt)
    return Manifest(tuple(utterances), provenance=provenance)


def write_manifest(manifest: Manifest) -> str:
    """Serialize a Manifest back to JSON Lines text, deterministically.

    Canonical fields come first in a fixed order, then opaque extras in their
    original order. Writing the parse of a written manifest reproduces the
    same bytes.
    """
    lines = [
        json.dumps(utt.to_record(), ensure_ascii=False) for utt in manifest.utterances
    ]
    if not lines:
        return ""
    return "\n".join(lines) + "\n"


def merge_pools(pools: Iterable[Manifest], exclude_langs: Iterable[str] = ()) -> Manifest:
    """Concatenate pools in order, dropping utterances tagged with an excluded language.

    Ids are namespaced as ``<provenance>/<original-id>`` so cross-dataset
    collisions are detectable; utterances with no language tag are kept
    (their language is simply unknown at this stage).
    """
    pools = list(pools)
    excluded = frozenset(exclude_langs)
    merged: list[Utterance] = []
    owner: dict[str, str] = {}
    for pool in pools:
        if not pool.provenance:
            raise ManifestError("every pool needs a non-empty provenance to be merged")
        for utt in pool:
            if utt.gold_lang in excluded or utt.auto_lang in excluded:
                continue
            new_id = f"{pool.provenance}/{utt.id}"
            if new_id in owner:
                raise ManifestError(
                    f"id collision after prefixing: {new_id!r} appears in pools "
                    f"{owner[new_id]!r} and {pool.provenance!r}"
                )
            owner[new_id] = pool.provenance
            merged.append(replace(utt, id=new_id))
    provenance = "+".join(dict.fromkeys(pool.provenance for pool in pools))
    return Manifest(tuple(merged), provenance=provenance)


@dataclass(frozen=True)
class HoursRow:
    """One (dataset, language) accounting row."""

    source_dataset: str
    language: str
    labeled_by: str
    video_count: int
    hours: float

    @property
    def hours_display(self) -> int:
        return int(round_half_up(self.hours))


@dataclass(frozen=True)
class HoursReport:
    """Data-hour accounting: per-row, per-language, and grand totals.

    Internal math stays real-valued; rounding to integer hours happens only
    at the display layer.
    """

    rows: tuple[HoursRow, ...]
    language_hours: dict[str, float]
    human_hours: float
    auto_hours: float

    @property
    def combined_hours(self) -> float:
        return self.human_hours + self.auto_hours

    def language_hours_display(self, lang: str) -> int:
        return int(round_half_up(self.language_hours[lang]))

    def to_record(self) -> dict:
        return {
            "rows": [
                {
                    "source_dataset": row.source_dataset,
                    "language": row.language,
                    "labeled_by": row.labeled_by,
                    "video_count": row.video_count,
                    "hours": row.hours,
                    "hours_display": row.hours_display,
                }
                for row in self.rows
            ],
            "language_hours": {
                lang: {"hours": hours, "hours_display": self.language_hours_display(lang)}
                for lang, hours in self.language_hours.items()
            },
            "totals": {
                "human_hours": self.human_hours,
                "auto_hours": self.auto_hours,
                "combined_hours": self.combined_hours,
                "human_hours_display": int(round_half_up(self.human_hours)),
                "auto_hours_display": int(round_half_up(self.auto_hours)),
                "combined_hours_display": int(round_half_up(self.combined_hours)),
            },
        }

    def render(self) -> str:
        lines = [f"{'Dataset':<10} {'Language':<9} {'Labeled':<8} {'Videos':>10} {'Hours':>7}"]
        for lang in self.language_hours:
            for row in self.rows:
                if row.language != lang:
                    continue
                lines.append(
                    f"{row.source_dataset:<10} {row.language:<9} {row.labeled_by:<8} "
                    f"{row.video_count:>10,} {row.hours_display:>7,}"
                )
            lines.append(
                f"{'':<10} {lang:<9} {'total':<8} {'':>10} {self.language_hours_display(lang):>7,}"
            )
        lines.append("")
        lines.append(f"Human-labeled hours:  {int(round_half_up(self.human_hours)):,}")
        lines.append(f"Auto-labeled hours:   {int(round_half_up(self.auto_hours)):,}")
        lines.append(f"Combined hours:       {int(round_half_up(self.combined_hours)):,}")
        return "\n".join(lines) + "\n"


def aggregate_hours(inputs: Iterable[tuple[Manifest, str]]) -> HoursReport:
    """Total video counts and hours per (dataset, language) and per labeling source.

    ``inputs`` pairs each manifest with how it was labeled (``"human"`` or
    ``"auto"``); the language of a row comes from the matching label field.
    Hours are the sum of ``duration_s`` divided by 3600.
    """
    seconds: dict[tuple[str, str, str], float] = {}
    counts: dict[tuple[str, str, str], int] = {}
    order: list[tuple[str, str, str]] = []
    lang_seconds: dict[str, float] = {}
    total_seconds = {HUMAN: 0.0, AUTO: 0.0}
    missing: list[str] = []

    for manifest, labeled_by in inputs:
        if labeled_by not in (HUMAN, AUTO):
            raise ValueError(f"labeled_by must be 'human' or 'auto', got {labeled_by!r}")
        for utt in manifest:
            if utt.duration_s is None:
                missing.append(utt.id)
                continue
            if labeled_by == HUMAN:
                lang = utt.gold_lang or utt.auto_lang or "und"
            else:
                lang = utt.auto_lang or utt.gold_lang or "und"
            key = (utt.source_dataset, lang, labeled_by)
            if key not in seconds:
                seconds[key] = 0.0
                counts[key] = 0
                order.append(key)
            seconds[key] += utt.duration_s
            counts[key] += 1
            lang_seconds[lang] = lang_seconds.get(lang, 0.0) + utt.duration_s
            total_seconds[labeled_by] += utt.duration_s

    if missing:
        raise ManifestError(
            "utterances missing duration_s: " + ", ".join(repr(i) for i in missing)
        )

    languages = sorted(lang_seconds, key=language_sort_key)
    rows = tuple(
        HoursRow(ds, lg, by, counts[(ds, lg, by)], seconds[(ds, lg, by)] / 3600.0)
        for lang in languages
        for (ds, lg, by) in order
        if lg == lang
    )
    return HoursReport(
        rows=rows,
        language_hours={lang: lang_seconds[lang] / 3600.0 for lang in languages},
        human_hours=total_seconds[HUMAN] / 3600.0,
        auto_hours=total_seconds[AUTO] / 3600.0,
    )
