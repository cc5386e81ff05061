"""Language-identification and transcription backends.

Two implementations of one contract: a table-driven scripted backend that is
a pure function of (table, error rate, seed) for tests and simulations, and
an adapter that drives external model-runner processes over a line-delimited
stdio protocol, so any ASR wrapper in any ecosystem plugs in with a few
lines of glue.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import queue
import random
import subprocess
import threading
import time
from dataclasses import dataclass
from typing import Iterable, Protocol

from .manifest import Manifest, Utterance


class BackendError(RuntimeError):
    """A backend could not produce a result for a request."""


@dataclass(frozen=True)
class LanguagePrediction:
    """Predicted language tag (lowercase two-letter style) with confidence."""

    lang: str
    confidence: float

    def __post_init__(self) -> None:
        if not self.lang:
            raise ValueError("predicted language tag must be non-empty")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must be in [0, 1], got {self.confidence!r}")


@dataclass(frozen=True)
class Transcription:
    """Transcript text plus the language tag the transcriber was conditioned on."""

    text: str
    lang: str


class Backend(Protocol):
    """The two calls the labeling pipeline makes, in this order per utterance."""

    def identify_language(self, utterance: Utterance) -> LanguagePrediction: ...

    def transcribe(self, utterance: Utterance, lang: str) -> Transcription: ...


# Perturbation operators, chosen at the default substitution-heavy 8:1:1
# ratio: ASR errors are substitution-dominated; the ratio is a test knob.
SUBSTITUTE = "sub"
DELETE = "del"
INSERT = "ins"
_OPS = (SUBSTITUTE, DELETE, INSERT)
DEFAULT_OP_WEIGHTS = (8.0, 1.0, 1.0)


def _derived_rng(seed: int, key: str) -> random.Random:
    digest = hashlib.sha256(f"{seed}:{key}".encode()).digest()
    return random.Random(int.from_bytes(digest[:16], "big"))


def perturb_words(
    words: list[str],
    rng: random.Random,
    error_rate: float,
    op_weights: tuple[float, float, float] = DEFAULT_OP_WEIGHTS,
    counts: dict[str, int] | None = None,
) -> list[str]:
    """Corrupt a word list at the given per-word rate.

    Substitution rewrites the word as its reversal (a palindrome doubles its
    last letter instead, so the output always differs while staying inside
    the word's own letter inventory); deletion drops the word; insertion
    duplicates it. Realized operations are tallied into ``counts`` when
    given.
    """
    out: list[str] = []
    for word in words:
        if rng.random() >= error_rate:
            out.append(word)
            continue
        op = rng.choices(_OPS, weights=op_weights)[0]
        if counts is not None:
            counts[op] = counts.get(op, 0) + 1
        if op == SUBSTITUTE:
            reversed_word = word[::-1]
            out.append(reversed_word if reversed_word != word else word + word[-1])
        elif op == INSERT:
            out.extend((word, word))
        # DELETE emits nothing.
    return out


@dataclass(frozen=True)
class ScriptedEntry:
    """What the scripted backend knows about one utterance id."""

    lang: str
    confidence: float
    text: str


class ScriptedBackend:
    """Table-driven backend: fixed predictions, optionally perturbed text.

    Transcripts are corrupted word-by-word at ``error_rate`` using a
    generator derived from (seed, utterance id), so outputs are identical
    across runs, platforms, and call orders. Realized operation counts are
    tallied for law-of-large-numbers checks against measured WER.
    """

    def __init__(
        self,
        table: dict[str, ScriptedEntry],
        error_rate: float = 0.0,
        seed: int = 0,
        op_weights: tuple[float, float, float] = DEFAULT_OP_WEIGHTS,
    ):
        if not 0.0 <= error_rate <= 1.0:
            raise ValueError(f"error_rate must be in [0, 1], got {error_rate!r}")
        if len(op_weights) != 3 or any(w < 0 for w in op_weights) or sum(op_weights) <= 0:
            raise ValueError(f"op_weights must be 3 non-negative weights, got {op_weights!r}")
        self.table = dict(table)
        self.error_rate = error_rate
        self.seed = seed
        self.op_weights = tuple(op_weights)
        self._counts_lock = threading.Lock()
        self._counts = {"words": 0, SUBSTITUTE: 0, DELETE: 0, INSERT: 0}

    @classmethod
    def from_gold(
        cls,
        gold: Manifest,
        error_rate: float = 0.0,
        seed: int = 0,
        confidence: float = 0.99,
        op_weights: tuple[float, float, float] = DEFAULT_OP_WEIGHTS,
    ) -> "ScriptedBackend":
        """Backend that predicts each utterance's gold labels.

        Snapshots gold_lang/gold_text into its own table, so it keeps
        working after the pipeline strips those fields from its copy of the
        pool.
        """
        table: dict[str, ScriptedEntry] = {}
        for utt in gold:
            if utt.gold_lang is None or utt.gold_text is None:
                raise ValueError(f"utterance {utt.id!r} lacks gold_lang/gold_text")
            table[utt.id] = ScriptedEntry(utt.gold_lang, confidence, utt.gold_text)
        return cls(table, error_rate=error_rate, seed=seed, op_weights=op_weights)

    @classmethod
    def from_jsonl(cls, lines: Iterable[str], **kwargs) -> "ScriptedBackend":
        """Load a table fixture: one {"id", "lang", "confidence", "text"} per line."""
        table: dict[str, ScriptedEntry] = {}
        for lineno, raw in enumerate(lines, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                entry = ScriptedEntry(
                    lang=record["lang"],
                    confidence=float(record["confidence"]),
                    text=record["text"],
                )
                utt_id = record["id"]
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"backend table line {lineno}: {exc}") from exc
            if utt_id in table:
                raise ValueError(f"backend table line {lineno}: duplicate id {utt_id!r}")
            table[utt_id] = entry
        return cls(table, **kwargs)

    def _entry(self, utterance: Utterance) -> ScriptedEntry:
        entry = self.table.get(utterance.id)
        if entry is None:
            raise BackendError(f"utterance {utterance.id!r} not in scripted table")
        return entry

    def identify_language(self, utterance: Utterance) -> LanguagePrediction:
        entry = self._entry(utterance)
        return LanguagePrediction(entry.lang, entry.confidence)

    def transcribe(self, utterance: Utterance, lang: str) -> Transcription:
        entry = self._entry(utterance)
        if self.error_rate == 0.0:
            return Transcription(entry.text, lang)
        rng = _derived_rng(self.seed, utterance.id)
        words = entry.text.split()
        local_counts: dict[str, int] = {}
        perturbed = perturb_words(words, rng, self.error_rate, self.op_weights, local_counts)
        with self._counts_lock:
            self._counts["words"] += len(words)
            for op in _OPS:
                self._counts[op] += local_counts.get(op, 0)
        return Transcription(" ".join(perturbed), lang)

    def realized_counts(self) -> dict[str, int]:
        """Words seen and operations actually applied since construction."""
        with self._counts_lock:
            return dict(self._counts)


class _Worker:
    """One runner process with a reader thread feeding a line queue."""

    def __init__(self, command: list[str]):
        self.proc = subprocess.Popen(
            command,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            encoding="utf-8",
            bufsize=1,
        )
        self.lines: queue.Queue[str | None] = queue.Queue()
        self._reader = threading.Thread(target=self._read, daemon=True)
        self._reader.start()

    def _read(self) -> None:
        assert self.proc.stdout is not None
        for line in self.proc.stdout:
            self.lines.put(line)
        self.lines.put(None)

    def request(self, record: dict, timeout_s: float) -> dict:
        assert self.proc.stdin is not None
        try:
            self.proc.stdin.write(json.dumps(record, ensure_ascii=False) + "\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise BackendError(f"runner stdin closed: {exc}") from exc
        try:
            line = self.lines.get(timeout=timeout_s)
        except queue.Empty:
            raise BackendError(f"runner gave no response within {timeout_s}s") from None
        if line is None:
            raise BackendError("runner closed its stdout")
        try:
            response = json.loads(line)
        except json.JSONDecodeError as exc:
            raise BackendError(f"runner sent invalid JSON: {line!r}") from exc
        if not isinstance(response, dict):
            raise BackendError(f"runner sent a non-object response: {line!r}")
        return response

    def close(self) -> None:
        try:
            self.proc.kill()
        except OSError:
            pass
        self.proc.wait()


class ExternalBackend:
    """Adapter for external model runners speaking the stdio wire protocol.

    Requests are one JSON object per line: ``{op: "lang_id" | "transcribe",
    id, media_ref, lang?}``. Responses are ``{id, lang, confidence}`` or
    ``{id, text}``. The adapter keeps ``parallelism`` runner processes alive
    and hands each request to an idle one, so callers may share the handle
    across threads and in-flight requests stay bounded. A dead or silent
    runner is restarted with exponential backoff, at most ``max_attempts``
    tries per request.
    """

    def __init__(
        self,
        command: list[str],
        parallelism: int = 1,
        timeout_s: float = 30.0,
        max_attempts: int = 3,
        backoff_s: float = 0.1,
    ):
        if not command:
            raise ValueError("runner command must be non-empty")
        if parallelism < 1:
            raise ValueError(f"parallelism must be >= 1, got {parallelism}")
        if max_attempts < 1:
            raise ValueError(f"max_attempts must be >= 1, got {max_attempts}")
        self.command = list(command)
        self.parallelism = parallelism
        self.timeout_s = timeout_s
        self.max_attempts = max_attempts
        self.backoff_s = backoff_s
        self._request_ids = itertools.count()
        self._idle: queue.Queue[_Worker] = queue.Queue()
        self._closed = False
        for _ in range(parallelism):
            self._idle.put(self._spawn())

    def _spawn(self) -> _Worker:
        try:
            return _Worker(self.command)
        except OSError as exc:
            raise BackendError(f"cannot start runner {self.command!r}: {exc}") from exc

    def _call(self, record: dict, context: str) -> dict:
        if self._closed:
            raise BackendError("backend is closed")
        last_error: Exception | None = None
        for attempt in range(self.max_attempts):
            worker = self._idle.get()
            try:
                if worker.proc.poll() is not None:
                    raise BackendError("runner process died")
                response = worker.request(record, self.timeout_s)
                if response.get("id") != record["id"]:
                    raise BackendError(
                        f"response id {response.get('id')!r} does not match "
                        f"request id {record['id']!r}"
                    )
            except BackendError as exc:
                last_error = exc
                worker.close()
                time.sleep(self.backoff_s * (2 ** attempt))
                self._idle.put(self._spawn())
                continue
            self._idle.put(worker)
            return response
        raise BackendError(
            f"{context} failed after {self.max_attempts} attempts: {last_error}"
        )

    def identify_language(self, utterance: Utterance) -> LanguagePrediction:
        record = {
            "op": "lang_id",
            "id": f"q{next(self._request_ids)}",
            "media_ref": utterance.media_ref,
        }
        response = self._call(record, f"lang_id for utterance {utterance.id!r}")
        try:
            return LanguagePrediction(response["lang"], float(response["confidence"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise BackendError(
                f"bad lang_id response for utterance {utterance.id!r}: {exc}"
            ) from exc

    def transcribe(self, utterance: Utterance, lang: str) -> Transcription:
        record = {
            "op": "transcribe",
            "id": f"q{next(self._request_ids)}",
            "media_ref": utterance.media_ref,
            "lang": lang,
        }
        response = self._call(record, f"transcribe for utterance {utterance.id!r}")
        text = response.get("text")
        if not isinstance(text, str):
            raise BackendError(
                f"bad transcribe response for utterance {utterance.id!r}: "
                f"missing text field"
            )
        return Transcription(text, lang)

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        while True:
            try:
                self._idle.get_nowait().close()
            except queue.Empty:
                break

    def __enter__(self) -> "ExternalBackend":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()
