"""Labeling-quality reports: preserved ratio and labeling WER."""

from __future__ import annotations

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from avlabel import (
    Manifest,
    ScriptedBackend,
    ScriptedEntry,
    Utterance,
    default_profiles,
    preserved_ratio,
    report_from_counts,
    simulate_relabel,
)
from conftest import FIXTURES

TARGETS = ("fr", "it", "es", "pt")


def gold_utt(uid: str, lang: str, text: str) -> Utterance:
    return Utterance(
        id=uid,
        media_ref=f"media/{uid}.mp4",
        source_dataset="MT",
        duration_s=5.0,
        gold_lang=lang,
        gold_text=text,
    )


class TestPreservedRatio:
    def test_fixture_count_ratios(self):
        assert preserved_ratio(58426, 58222) == 99.7
        assert preserved_ratio(26108, 25898) == 99.2
        assert preserved_ratio(44532, 37853) == 85.0
        assert preserved_ratio(52058, 51555) == 99.0

    def test_rounds_half_up_at_one_decimal(self):
        assert preserved_ratio(10000, 9945) == 99.5
        assert preserved_ratio(200, 199) == 99.5

    def test_boundaries(self):
        assert preserved_ratio(10, 10) == 100.0
        assert preserved_ratio(10, 0) == 0.0

    def test_zero_gold_is_an_error(self):
        with pytest.raises(ValueError):
            preserved_ratio(0, 0)

    def test_auto_beyond_gold_is_an_error(self):
        with pytest.raises(ValueError):
            preserved_ratio(5, 6)
        with pytest.raises(ValueError):
            preserved_ratio(5, -1)

    @given(
        gold=st.integers(min_value=1, max_value=10_000),
        auto=st.integers(min_value=0, max_value=10_000),
    )
    @settings(max_examples=150)
    def test_always_a_percentage(self, gold, auto):
        if auto > gold:
            with pytest.raises(ValueError):
                preserved_ratio(gold, auto)
            return
        ratio = preserved_ratio(gold, auto)
        assert 0.0 <= ratio <= 100.0
        assert ratio == round(ratio, 1)

    @given(gold=st.integers(min_value=1, max_value=500))
    @settings(max_examples=60)
    def test_monotone_in_auto_count(self, gold):
        ratios = [preserved_ratio(gold, auto) for auto in range(gold + 1)]
        assert ratios == sorted(ratios)


class TestReportFromCounts:
    def test_fixture_counts_render(self):
        counts = json.loads((FIXTURES / "counts.json").read_text(encoding="utf-8"))
        report = report_from_counts(
            {lang: (c["gold_count"], c["auto_count"]) for lang, c in counts.items()}
        )
        assert [r.lang for r in report.rows] == ["fr", "it", "es", "pt"]
        assert [r.preserved_ratio_pct for r in report.rows] == [99.7, 99.2, 85.0, 99.0]
        text = report.render()
        for needle in ("99.7", "99.2", "85.0", "99.0", "n/a"):
            assert needle in text

    def test_row_lookup(self):
        report = report_from_counts({"fr": (10, 9)})
        assert report.row("fr").auto_count == 9
        with pytest.raises(KeyError):
            report.row("it")

    def test_to_record_round_trips_through_json(self):
        report = report_from_counts({"fr": (10, 9)})
        record = json.loads(json.dumps(report.to_record()))
        assert record["rows"][0]["preserved_ratio_pct"] == 90.0
        assert record["rows"][0]["labeling_wer_pct"] is None


class TestSimulateRelabel:
    def test_perfect_backend_scores_perfectly(self):
        gold = Manifest(
            (
                gold_utt("f1", "fr", "bonjour tout le monde"),
                gold_utt("f2", "fr", "le cœur de la forêt"),
                gold_utt("i1", "it", "la casa è grande"),
            ),
            provenance="mt",
        )
        backend = ScriptedBackend.from_gold(gold)
        outcome = simulate_relabel(gold, backend, backend, TARGETS, default_profiles())
        fr = outcome.report.row("fr")
        it = outcome.report.row("it")
        assert (fr.gold_count, fr.auto_count, fr.preserved_ratio_pct) == (2, 2, 100.0)
        assert fr.labeling_wer_pct == 0.0
        assert (it.gold_count, it.auto_count) == (1, 1)

    def test_wer_counts_kept_rows_only(self):
        # Three gold rows: one clean keep, one keep with a one-word
        # substitution, one charset reject. WER must be 1 edit over the
        # seven reference words of the two kept rows: 14.29 after rounding.
        gold = Manifest(
            (
                gold_utt("f1", "fr", "bonjour tout le monde"),
                gold_utt("f2", "fr", "le chat dort"),
                gold_utt("f3", "fr", "un garçon français"),
            ),
            provenance="mt",
        )
        backend = ScriptedBackend(
            {
                "f1": ScriptedEntry("fr", 0.9, "bonjour tout le monde"),
                "f2": ScriptedEntry("fr", 0.9, "le chien dort"),
                "f3": ScriptedEntry("fr", 0.9, "un niño français"),
            }
        )
        outcome = simulate_relabel(gold, backend, backend, TARGETS, default_profiles())
        fr = outcome.report.row("fr")
        assert (fr.gold_count, fr.auto_count) == (3, 2)
        assert fr.preserved_ratio_pct == 66.7
        assert fr.labeling_wer_pct == 14.29

    def test_cross_bucket_rows_score_under_their_gold_language(self):
        # u2 is truly French but the identifier calls it Italian: it
        # survives the pipeline (bucketed as it), so French keeps credit
        # for it, and its transcript pair scores against the French gold.
        gold = Manifest(
            (
                gold_utt("u1", "fr", "bonjour le monde"),
                gold_utt("u2", "fr", "la porte est ouverte"),
            ),
            provenance="mt",
        )
        backend = ScriptedBackend(
            {
                "u1": ScriptedEntry("fr", 0.9, "bonjour le monde"),
                "u2": ScriptedEntry("it", 0.9, "la porta e aperta"),
            }
        )
        outcome = simulate_relabel(gold, backend, backend, TARGETS, default_profiles())
        fr = outcome.report.row("fr")
        assert (fr.gold_count, fr.auto_count) == (2, 2)
        assert fr.preserved_ratio_pct == 100.0
        # "la porta e aperta" vs "la porte est ouverte": three substitutions
        # over seven reference words, plus the clean pair.
        assert fr.labeling_wer_pct == 42.86
        assert "it" not in {r.lang for r in outcome.report.rows}

    def test_fully_rejected_language_renders_na(self):
        gold = Manifest(
            (gold_utt("e1", "es", "el niño come pan"),), provenance="mt"
        )
        backend = ScriptedBackend({"e1": ScriptedEntry("gl", 0.9, "bos días")})
        outcome = simulate_relabel(gold, backend, backend, TARGETS, default_profiles())
        es = outcome.report.row("es")
        assert (es.gold_count, es.auto_count) == (1, 0)
        assert es.preserved_ratio_pct == 0.0
        assert es.labeling_wer_pct is None
        assert "n/a" in outcome.report.render()

    def test_unlabeled_gold_rows_rejected(self):
        bare = Manifest(
            (Utterance(id="x", media_ref="m.mp4", source_dataset="MT"),),
            provenance="mt",
        )
        backend = ScriptedBackend({})
        with pytest.raises(ValueError, match="x"):
            simulate_relabel(bare, backend, backend, TARGETS, default_profiles())

    def test_auto_count_never_exceeds_gold_count(self):
        gold = Manifest(
            tuple(
                gold_utt(f"u{i}", ["fr", "it"][i % 2], "bonjour le monde")
                for i in range(8)
            ),
            provenance="mt",
        )
        backend = ScriptedBackend.from_gold(gold, error_rate=0.4, seed=3)
        outcome = simulate_relabel(gold, backend, backend, TARGETS, default_profiles())
        for row in outcome.report.rows:
            assert 0 <= row.auto_count <= row.gold_count

    def test_pipeline_artifacts_travel_with_the_report(self):
        gold = Manifest(
            (gold_utt("f1", "fr", "bonjour tout le monde"),), provenance="mt"
        )
        backend = ScriptedBackend.from_gold(gold)
        outcome = simulate_relabel(gold, backend, backend, TARGETS, default_profiles())
        assert outcome.pipeline.stats.input_count == 1
        assert [u.id for u in outcome.pipeline.manifests["fr"]] == ["f1"]
