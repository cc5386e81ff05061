"""Scripted and external labeling backends.

External-backend tests drive real child processes through the stdio
protocol, including crash, garbage, wrong-id, and timeout runners.
"""

from __future__ import annotations

import json
import random
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import pytest

from avlabel import (
    BackendError,
    ExternalBackend,
    LanguagePrediction,
    ScriptedBackend,
    ScriptedEntry,
    Transcription,
    Utterance,
    perturb_words,
)
from avlabel.backends import DELETE, INSERT, SUBSTITUTE


def utt(uid: str, media_ref: str | None = None) -> Utterance:
    return Utterance(id=uid, media_ref=media_ref or f"media/{uid}.mp4", source_dataset="VC")


class TestValueTypes:
    def test_prediction_confidence_bounds(self):
        LanguagePrediction("fr", 0.0)
        LanguagePrediction("fr", 1.0)
        with pytest.raises(ValueError):
            LanguagePrediction("fr", 1.01)
        with pytest.raises(ValueError):
            LanguagePrediction("fr", -0.01)

    def test_prediction_requires_language(self):
        with pytest.raises(ValueError):
            LanguagePrediction("", 0.5)

    def test_transcription_is_plain_data(self):
        t = Transcription("ciao", "it")
        assert (t.text, t.lang) == ("ciao", "it")


class TestPerturbWords:
    def test_zero_rate_is_identity(self):
        words = ["la", "casa", "bella"]
        assert perturb_words(words, random.Random(0), 0.0) == words

    def test_substitution_reverses_the_word(self):
        out = perturb_words(["casa"], random.Random(0), 1.0, (1.0, 0.0, 0.0))
        assert out == ["asac"]

    def test_palindrome_substitution_still_differs(self):
        out = perturb_words(["anna", "e"], random.Random(0), 1.0, (1.0, 0.0, 0.0))
        assert out == ["annaa", "ee"]

    def test_deletion_drops_the_word(self):
        out = perturb_words(["uno", "due"], random.Random(0), 1.0, (0.0, 1.0, 0.0))
        assert out == []

    def test_insertion_duplicates_the_word(self):
        out = perturb_words(["uno"], random.Random(0), 1.0, (0.0, 0.0, 1.0))
        assert out == ["uno", "uno"]

    def test_counts_tally_applied_operations(self):
        counts: dict[str, int] = {}
        perturb_words(["a"] * 1000, random.Random(7), 0.5, (1.0, 1.0, 1.0), counts)
        assert set(counts) <= {SUBSTITUTE, DELETE, INSERT}
        assert 300 < sum(counts.values()) < 700

    def test_rates_converge_to_the_configured_mix(self):
        # 100k words at rate 0.0755 with an 8:1:1 mix; the realized
        # frequencies must sit within a few standard deviations.
        counts: dict[str, int] = {}
        words = ["casa"] * 100_000
        perturb_words(words, random.Random(123), 0.0755, (8.0, 1.0, 1.0), counts)
        total_ops = sum(counts.values())
        assert total_ops / len(words) == pytest.approx(0.0755, abs=0.005)
        assert counts[SUBSTITUTE] / total_ops == pytest.approx(0.8, abs=0.02)
        assert counts[DELETE] / total_ops == pytest.approx(0.1, abs=0.015)
        assert counts[INSERT] / total_ops == pytest.approx(0.1, abs=0.015)


class TestScriptedBackend:
    def table(self) -> dict[str, ScriptedEntry]:
        return {
            "u1": ScriptedEntry("fr", 0.95, "bonjour tout le monde"),
            "u2": ScriptedEntry("it", 0.90, "la casa è grande"),
        }

    def test_identify_returns_table_entry(self):
        backend = ScriptedBackend(self.table())
        pred = backend.identify_language(utt("u1"))
        assert pred == LanguagePrediction("fr", 0.95)

    def test_unknown_id_is_a_backend_error(self):
        backend = ScriptedBackend(self.table())
        with pytest.raises(BackendError, match="u9"):
            backend.identify_language(utt("u9"))
        with pytest.raises(BackendError, match="u9"):
            backend.transcribe(utt("u9"), "fr")

    def test_zero_rate_transcribes_verbatim(self):
        backend = ScriptedBackend(self.table(), error_rate=0.0)
        assert backend.transcribe(utt("u2"), "it").text == "la casa è grande"

    def test_perturbation_is_pure_in_seed_and_id(self):
        a = ScriptedBackend(self.table(), error_rate=0.8, seed=42)
        b = ScriptedBackend(self.table(), error_rate=0.8, seed=42)
        # Query order differs; outputs must not.
        a1 = a.transcribe(utt("u1"), "fr").text
        a2 = a.transcribe(utt("u2"), "it").text
        b2 = b.transcribe(utt("u2"), "it").text
        b1 = b.transcribe(utt("u1"), "fr").text
        assert (a1, a2) == (b1, b2)
        assert a.transcribe(utt("u1"), "fr").text == a1

    def test_different_seeds_give_different_outputs(self):
        table = {
            f"u{i}": ScriptedEntry("fr", 0.9, "un deux trois quatre cinq six sept")
            for i in range(20)
        }
        a = ScriptedBackend(table, error_rate=0.5, seed=1)
        b = ScriptedBackend(table, error_rate=0.5, seed=2)
        outputs_a = [a.transcribe(utt(f"u{i}"), "fr").text for i in range(20)]
        outputs_b = [b.transcribe(utt(f"u{i}"), "fr").text for i in range(20)]
        assert outputs_a != outputs_b

    def test_realized_counts_accumulate(self):
        backend = ScriptedBackend(self.table(), error_rate=1.0, op_weights=(1.0, 0.0, 0.0))
        backend.transcribe(utt("u1"), "fr")
        counts = backend.realized_counts()
        assert counts["words"] == 4
        assert counts[SUBSTITUTE] == 4

    def test_counts_are_a_snapshot(self):
        backend = ScriptedBackend(self.table(), error_rate=1.0)
        snap = backend.realized_counts()
        backend.transcribe(utt("u1"), "fr")
        assert snap["words"] == 0

    def test_invalid_error_rate_rejected(self):
        with pytest.raises(ValueError):
            ScriptedBackend({}, error_rate=1.5)
        with pytest.raises(ValueError):
            ScriptedBackend({}, error_rate=-0.1)

    def test_invalid_weights_rejected(self):
        with pytest.raises(ValueError):
            ScriptedBackend({}, op_weights=(0.0, 0.0, 0.0))
        with pytest.raises(ValueError):
            ScriptedBackend({}, op_weights=(-1.0, 1.0, 1.0))

    def test_from_gold_snapshots_labels(self):
        from avlabel import Manifest

        gold = Manifest(
            (
                Utterance(
                    id="g1",
                    media_ref="m.mp4",
                    source_dataset="MT",
                    gold_lang="pt",
                    gold_text="não faz mal",
                ),
            ),
            provenance="mt",
        )
        backend = ScriptedBackend.from_gold(gold, confidence=0.88)
        assert backend.identify_language(utt("g1")) == LanguagePrediction("pt", 0.88)
        assert backend.transcribe(utt("g1"), "pt").text == "não faz mal"

    def test_from_gold_rejects_unlabeled_rows(self):
        from avlabel import Manifest

        bare = Manifest((utt("g1"),), provenance="mt")
        with pytest.raises(ValueError, match="g1"):
            ScriptedBackend.from_gold(bare)

    def test_from_jsonl_parses_and_rejects_duplicates(self):
        lines = [
            '{"id": "a", "lang": "fr", "confidence": 0.9, "text": "oui"}',
            '{"id": "a", "lang": "fr", "confidence": 0.9, "text": "non"}',
        ]
        with pytest.raises(ValueError, match="line 2"):
            ScriptedBackend.from_jsonl(lines)
        backend = ScriptedBackend.from_jsonl(lines[:1])
        assert backend.transcribe(utt("a"), "fr").text == "oui"


OK_RUNNER = """\
import json, sys, os
for line in sys.stdin:
    req = json.loads(line)
    if req["op"] == "lang_id":
        lang = "fr" if "/fr/" in req["media_ref"] else "xx"
        out = {"id": req["id"], "lang": lang, "confidence": 0.9}
    else:
        out = {"id": req["id"], "text": "text for " + req["media_ref"], "pid": os.getpid()}
    print(json.dumps(out), flush=True)
"""

ECHO_RUNNER = """\
import json, sys
for line in sys.stdin:
    req = json.loads(line)
    print(json.dumps({"id": req["id"], "text": line.strip()}), flush=True)
"""

DIE_AFTER_ONE_RUNNER = """\
import json, sys
line = sys.stdin.readline()
req = json.loads(line)
print(json.dumps({"id": req["id"], "lang": "fr", "confidence": 0.8}), flush=True)
sys.exit(0)
"""

GARBAGE_RUNNER = """\
import sys
for line in sys.stdin:
    print("this is not json", flush=True)
"""

WRONG_ID_RUNNER = """\
import json, sys
for line in sys.stdin:
    print(json.dumps({"id": "nope", "lang": "fr", "confidence": 0.5}), flush=True)
"""

SLEEPY_RUNNER = """\
import json, sys, time
for line in sys.stdin:
    time.sleep(10)
    req = json.loads(line)
    print(json.dumps({"id": req["id"], "lang": "fr", "confidence": 0.5}), flush=True)
"""


def runner_command(tmp_path: Path, source: str) -> list[str]:
    script = tmp_path / "runner.py"
    script.write_text(source, encoding="utf-8")
    return [sys.executable, str(script)]


class TestExternalBackend:
    def test_identify_and_transcribe_round_trip(self, tmp_path):
        with ExternalBackend(runner_command(tmp_path, OK_RUNNER)) as backend:
            pred = backend.identify_language(utt("x", media_ref="media/fr/x.mp4"))
            assert pred == LanguagePrediction("fr", 0.9)
            text = backend.transcribe(utt("x", media_ref="media/fr/x.mp4"), "fr").text
            assert text == "text for media/fr/x.mp4"

    def test_wire_format_of_requests(self, tmp_path):
        with ExternalBackend(runner_command(tmp_path, ECHO_RUNNER)) as backend:
            echoed = backend.transcribe(utt("u7", media_ref="m/u7.mp4"), "it").text
            request = json.loads(echoed)
            assert request["op"] == "transcribe"
            assert request["media_ref"] == "m/u7.mp4"
            assert request["lang"] == "it"
            assert request["id"].startswith("q")

    def test_dead_runner_is_respawned(self, tmp_path):
        command = runner_command(tmp_path, DIE_AFTER_ONE_RUNNER)
        with ExternalBackend(command, backoff_s=0.01) as backend:
            for i in range(4):
                pred = backend.identify_language(utt(f"u{i}"))
                assert pred.lang == "fr"

    def test_garbage_runner_exhausts_retries(self, tmp_path):
        command = runner_command(tmp_path, GARBAGE_RUNNER)
        with ExternalBackend(command, max_attempts=2, backoff_s=0.01) as backend:
            with pytest.raises(BackendError, match="2 attempts"):
                backend.identify_language(utt("u1"))

    def test_mismatched_response_id_rejected(self, tmp_path):
        command = runner_command(tmp_path, WRONG_ID_RUNNER)
        with ExternalBackend(command, max_attempts=1) as backend:
            with pytest.raises(BackendError, match="does not match"):
                backend.identify_language(utt("u1"))

    def test_silent_runner_times_out(self, tmp_path):
        command = runner_command(tmp_path, SLEEPY_RUNNER)
        with ExternalBackend(command, timeout_s=0.3, max_attempts=1) as backend:
            with pytest.raises(BackendError, match="attempt"):
                backend.identify_language(utt("u1"))

    def test_parallel_requests_use_multiple_runners(self, tmp_path):
        command = runner_command(tmp_path, OK_RUNNER)
        utts = [utt(f"u{i}", media_ref=f"m/{i}.mp4") for i in range(12)]
        with ExternalBackend(command, parallelism=3) as backend:
            with ThreadPoolExecutor(max_workers=6) as pool:
                texts = list(pool.map(lambda u: backend.transcribe(u, "fr").text, utts))
        assert texts == [f"text for m/{i}.mp4" for i in range(12)]

    def test_requests_match_responses_under_concurrency(self, tmp_path):
        command = runner_command(tmp_path, OK_RUNNER)
        utts = [utt(f"u{i}", media_ref=f"m/{i}.mp4") for i in range(30)]
        with ExternalBackend(command, parallelism=4) as backend:
            with ThreadPoolExecutor(max_workers=8) as pool:
                pairs = list(
                    pool.map(lambda u: (u.media_ref, backend.transcribe(u, "fr").text), utts)
                )
        for media_ref, text in pairs:
            assert text == f"text for {media_ref}"

    def test_close_is_idempotent_and_blocks_further_use(self, tmp_path):
        backend = ExternalBackend(runner_command(tmp_path, OK_RUNNER))
        backend.close()
        backend.close()
        with pytest.raises(BackendError, match="closed"):
            backend.identify_language(utt("u1"))

    def test_empty_command_rejected(self):
        with pytest.raises(ValueError):
            ExternalBackend([])

    def test_bad_parallelism_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            ExternalBackend(runner_command(tmp_path, OK_RUNNER), parallelism=0)
