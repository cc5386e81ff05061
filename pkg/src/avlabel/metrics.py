"""Text normalization and edit-distance metrics (WER / CER).

Rates are micro-averaged over a corpus: total edits divided by total
reference length, not a mean of per-utterance rates, so long utterances
weigh proportionally more.
"""

from __future__ import annotations

import unicodedata
from dataclasses import dataclass
from typing import Iterable, Sequence

# Edit operations, in backtrace preference order.
MATCH = "match"
SUB = "sub"
INS = "ins"
DEL = "del"

# Joiners kept only when flanked by word characters on both sides
# (l'aereo, porte-clés); U+2019 is folded to the ASCII apostrophe.
_JOINERS = {"'", "-"}


@dataclass(frozen=True)
class NormalizationPolicy:
    """Which canonicalization steps to apply before tokenizing.

    NFC form and whitespace collapsing are always on; casing and
    punctuation stripping are toggles so scoring can match differently
    prepared references.
    """

    lowercase: bool = True
    strip_punct: bool = True


DEFAULT_POLICY = NormalizationPolicy()


def _is_word_char(ch: str) -> bool:
    return unicodedata.category(ch)[0] in ("L", "N", "M")


def normalize_text(text: str, policy: NormalizationPolicy = DEFAULT_POLICY) -> str:
    """Canonicalize text for scoring: NFC, lowercase, strip punctuation.

    Punctuation maps to a space rather than vanishing, so tokens never fuse
    across a removed symbol. Apostrophes and hyphens survive only inside a
    word (U+2019 is folded to the ASCII apostrophe first). The result is
    NFC and single-space separated, and the function is idempotent for any
    policy: normalize(normalize(x)) == normalize(x).
    """
    text = unicodedata.normalize("NFC", text)
    if policy.lowercase:
        # Lowercasing can denormalize some compositions, so re-run NFC.
        text = unicodedata.normalize("NFC", text.lower())
    if policy.strip_punct:
        text = text.replace("’", "'")
        out: list[str] = []
        for i, ch in enumerate(text):
            if _is_word_char(ch):
                out.append(ch)
            elif ch in _JOINERS:
                prev_ok = i > 0 and _is_word_char(text[i - 1])
                next_ok = i + 1 < len(text) and _is_word_char(text[i + 1])
                out.append(ch if prev_ok and next_ok else " ")
            else:
                out.append(" ")
        text = "".join(out)
    return " ".join(text.split())


def tokenize_words(text: str, policy: NormalizationPolicy = DEFAULT_POLICY) -> list[str]:
    return normalize_text(text, policy).split()


def tokenize_chars(text: str, policy: NormalizationPolicy = DEFAULT_POLICY) -> list[str]:
    """Characters of the normalized string, spaces included as tokens."""
    return list(normalize_text(text, policy))


@dataclass(frozen=True)
class AlignmentStep:
    """One edit-path step: op plus the tokens it consumed (None for ins/del sides)."""

    op: str
    ref: str | None
    hyp: str | None


@dataclass(frozen=True)
class Alignment:
    """A minimal edit path between a reference and a hypothesis token sequence."""

    steps: tuple[AlignmentStep, ...]
    substitutions: int
    deletions: int
    insertions: int
    matches: int

    @property
    def distance(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def ref_length(self) -> int:
        return self.matches + self.substitutions + self.deletions


def align(ref: Sequence[str], hyp: Sequence[str]) -> Alignment:
    """Levenshtein-align two token sequences (unit costs).

    Backtrace prefers diagonal steps (match, then substitution), then
    insertion, then deletion, which keeps paths deterministic when several
    are minimal.
    """
    n, m = len(ref), len(hyp)
    # dist[i][j] = edits between ref[:i] and hyp[:j]
    dist = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        dist[i][0] = i
    for j in range(1, m + 1):
        dist[0][j] = j
    for i in range(1, n + 1):
        row, prev = dist[i], dist[i - 1]
        r = ref[i - 1]
        for j in range(1, m + 1):
            same = r == hyp[j - 1]
            row[j] = min(prev[j - 1] + (0 if same else 1), row[j - 1] + 1, prev[j] + 1)

    steps: list[AlignmentStep] = []
    counts = {MATCH: 0, SUB: 0, INS: 0, DEL: 0}
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0:
            same = ref[i - 1] == hyp[j - 1]
            if dist[i][j] == dist[i - 1][j - 1] + (0 if same else 1):
                op = MATCH if same else SUB
                steps.append(AlignmentStep(op, ref[i - 1], hyp[j - 1]))
                counts[op] += 1
                i, j = i - 1, j - 1
                continue
        if j > 0 and dist[i][j] == dist[i][j - 1] + 1:
            steps.append(AlignmentStep(INS, None, hyp[j - 1]))
            counts[INS] += 1
            j -= 1
            continue
        steps.append(AlignmentStep(DEL, ref[i - 1], None))
        counts[DEL] += 1
        i -= 1
    steps.reverse()
    return Alignment(
        steps=tuple(steps),
        substitutions=counts[SUB],
        deletions=counts[DEL],
        insertions=counts[INS],
        matches=counts[MATCH],
    )


@dataclass(frozen=True)
class ErrorRateReport:
    """Micro-averaged corpus error rate with its edit breakdown."""

    substitutions: int
    deletions: int
    insertions: int
    matches: int
    ref_tokens: int
    pairs: int

    @property
    def edits(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def rate(self) -> float:
        if self.ref_tokens == 0:
            raise ValueError("error rate undefined: every normalized reference is empty")
        return self.edits / self.ref_tokens

    @property
    def percent(self) -> float:
        return 100.0 * self.rate

    def to_record(self) -> dict:
        return {
            "substitutions": self.substitutions,
            "deletions": self.deletions,
            "insertions": self.insertions,
            "matches": self.matches,
            "ref_tokens": self.ref_tokens,
            "pairs": self.pairs,
            "rate": self.rate,
            "percent": self.percent,
        }


def _score_corpus(
    pairs: Iterable[tuple[str, str]], tokenize, policy: NormalizationPolicy
) -> ErrorRateReport:
    subs = dels = ins = matches = ref_total = n = 0
    for ref_text, hyp_text in pairs:
        a = align(tokenize(ref_text, policy), tokenize(hyp_text, policy))
        subs += a.substitutions
        dels += a.deletions
        ins += a.insertions
        matches += a.matches
        ref_total += a.ref_length
        n += 1
    return ErrorRateReport(subs, dels, ins, matches, ref_total, n)


def corpus_wer(
    pairs: Iterable[tuple[str, str]], policy: NormalizationPolicy = DEFAULT_POLICY
) -> ErrorRateReport:
    """Micro-averaged corpus WER over (reference, hypothesis) text pairs."""
    return _score_corpus(pairs, tokenize_words, policy)


def corpus_cer(
    pairs: Iterable[tuple[str, str]], policy: NormalizationPolicy = DEFAULT_POLICY
) -> ErrorRateReport:
    """Micro-averaged corpus CER over (reference, hypothesis) text pairs."""
    return _score_corpus(pairs, tokenize_chars, policy)
