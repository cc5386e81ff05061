"""Joint CTC/attention decoding over a frame-level emission matrix.

Token id conventions: emissions have one column per symbol with id 0
reserved for the CTC blank; real tokens are ids 1..V-1. Attention score
rows span the same V ids, but slot 0 on the output side means
end-of-sequence (blank is never an output token, so its slot is reused).

All search math runs in the log domain with -inf as the zero-probability
sentinel; logaddexp absorbs -inf correctly and nothing multiplies a
probability, so NaN cannot appear.
"""

from __future__ import annotations

import hashlib
import itertools
import math
import random
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Protocol

import numpy as np

BLANK = 0
EOS = 0

_ROW_SUM_TOL = 1e-6
_EXHAUSTIVE_LIMIT = 1_000_000


class DecodingError(ValueError):
    """Invalid emissions, scorer, or search configuration."""


@dataclass(frozen=True)
class EmissionMatrix:
    """Per-frame posterior distributions over the CTC symbol set.

    ``probs`` is T x V, row-stochastic (each row sums to 1 within 1e-6,
    entries non-negative); column 0 is the blank symbol.
    """

    probs: np.ndarray

    def __post_init__(self) -> None:
        probs = np.asarray(self.probs, dtype=np.float64)
        object.__setattr__(self, "probs", probs)
        if probs.ndim != 2:
            raise DecodingError(f"emissions must be 2-dimensional, got shape {probs.shape}")
        T, V = probs.shape
        if T < 1 or V < 2:
            raise DecodingError(f"emissions need >= 1 frame and >= 2 symbols, got {T}x{V}")
        if np.isnan(probs).any() or (probs < 0).any():
            raise DecodingError("emission probabilities must be non-negative reals")
        row_sums = probs.sum(axis=1)
        bad = np.flatnonzero(np.abs(row_sums - 1.0) > _ROW_SUM_TOL)
        if bad.size:
            raise DecodingError(
                f"emission rows {bad[:5].tolist()} do not sum to 1 "
                f"(worst deviation {np.abs(row_sums - 1.0).max():.3g})"
            )

    @property
    def num_frames(self) -> int:
        return self.probs.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.probs.shape[1]

    @cached_property
    def log_probs(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.probs)

    @classmethod
    def from_text(cls, text: str) -> "EmissionMatrix":
        """Parse the text format: header line ``T V``, then T rows of V reals."""
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise DecodingError("empty emissions file")
        head = lines[0].split()
        if len(head) != 2:
            raise DecodingError("emissions header must be two integers: T V")
        try:
            T, V = int(head[0]), int(head[1])
        except ValueError as exc:
            raise DecodingError(f"bad emissions header {lines[0]!r}") from exc
        if len(lines) - 1 != T:
            raise DecodingError(f"header says {T} rows but file has {len(lines) - 1}")
        rows = []
        for lineno, line in enumerate(lines[1:], start=2):
            values = line.split()
            if len(values) != V:
                raise DecodingError(f"line {lineno}: expected {V} values, got {len(values)}")
            try:
                rows.append([float(v) for v in values])
            except ValueError as exc:
                raise DecodingError(f"line {lineno}: non-numeric value") from exc
        return cls(np.array(rows))

    def to_text(self) -> str:
        T, V = self.probs.shape
        lines = [f"{T} {V}"]
        lines.extend(" ".join(repr(float(v)) for v in row) for row in self.probs)
        return "\n".join(lines) + "\n"


def _check_log_rows(rows: np.ndarray, what: str) -> None:
    if rows.ndim != 2:
        raise DecodingError(f"{what} must be 2-dimensional, got shape {rows.shape}")
    if rows.shape[0] < 1 or rows.shape[1] < 2:
        raise DecodingError(f"{what} needs >= 1 row and >= 2 columns, got {rows.shape}")
    if np.isnan(rows).any() or (rows == np.inf).any():
        raise DecodingError(f"{what} must contain only finite values or -inf")
    mass = np.logaddexp.reduce(rows, axis=1)
    bad = np.flatnonzero(np.abs(mass) > _ROW_SUM_TOL)
    if bad.size:
        raise DecodingError(
            f"{what} rows {bad[:5].tolist()} are not normalized log distributions "
            f"(logsumexp off by up to {np.abs(mass).max():.3g})"
        )


@dataclass(frozen=True)
class CtcPrefixState:
    """Forward variables of the CTC prefix recursion for one prefix.

    ``gamma_n[t]`` / ``gamma_b[t]``: log-probability that frames 0..t emit
    exactly the prefix with the path ending in its last symbol / in blank.
    ``log_psi`` is the prefix-continuation mass that ranks live hypotheses:
    all alignments that realize the prefix, whether or not more follows.
    """

    gamma_n: np.ndarray
    gamma_b: np.ndarray
    last: int | None
    log_psi: float


class CtcPrefixScorer:
    """Incremental CTC prefix scoring against one emission matrix.

    States are immutable so a beam can extend a shared parent state many
    times; each ``extend`` costs O(T).
    """

    def __init__(self, emissions: EmissionMatrix, blank: int = BLANK):
        if not 0 <= blank < emissions.vocab_size:
            raise DecodingError(
                f"blank id {blank} out of range for {emissions.vocab_size} symbols"
            )
        self.emissions = emissions
        self.log_probs = emissions.log_probs
        self.blank = blank
        self.num_frames = emissions.num_frames
        self.vocab_size = emissions.vocab_size

    def initial_state(self) -> CtcPrefixState:
        """State of the empty prefix: only all-blank paths emit nothing."""
        gamma_b = np.cumsum(self.log_probs[:, self.blank])
        gamma_n = np.full(self.num_frames, -np.inf)
        return CtcPrefixState(gamma_n=gamma_n, gamma_b=gamma_b, last=None, log_psi=0.0)

    def extend(self, state: CtcPrefixState, token: int) -> CtcPrefixState:
        """State for the parent prefix extended by one non-blank token."""
        if token == self.blank or not 0 <= token < self.vocab_size:
            raise DecodingError(f"cannot extend a prefix with token {token}")
        x = self.log_probs[:, token]
        blank_col = self.log_probs[:, self.blank]
        T = self.num_frames
        # phi[t]: parent-prefix mass at frame t after which `token` may start.
        # Repeating the last symbol needs an intervening blank, so paths
        # ending in that symbol are excluded from phi in the repeat case.
        if state.last == token:
            phi = state.gamma_b
        else:
            phi = np.logaddexp(state.gamma_b, state.gamma_n)

        gamma_n = np.full(T, -np.inf)
        gamma_b = np.full(T, -np.inf)
        gamma_n[0] = x[0] if state.last is None else -np.inf
        for t in range(1, T):
            gamma_n[t] = np.logaddexp(gamma_n[t - 1], phi[t - 1]) + x[t]
            gamma_b[t] = np.logaddexp(gamma_b[t - 1], gamma_n[t - 1]) + blank_col[t]
        # psi sums the mass over every frame where the new token could start.
        log_psi = gamma_n[0]
        for t in range(1, T):
            log_psi = np.logaddexp(log_psi, phi[t - 1] + x[t])
        return CtcPrefixState(
            gamma_n=gamma_n, gamma_b=gamma_b, last=token, log_psi=float(log_psi)
        )

    def full_log_prob(self, state: CtcPrefixState) -> float:
        """Log-probability that the prefix is the complete emitted sequence."""
        return float(np.logaddexp(state.gamma_n[-1], state.gamma_b[-1]))

    def state_for(self, prefix: Iterable[int]) -> CtcPrefixState:
        state = self.initial_state()
        for token in prefix:
            state = self.extend(state, token)
        return state


@dataclass(frozen=True)
class CtcPrefixResult:
    """One-shot prefix scoring output: the DP rows plus both score readings."""

    gamma_b: np.ndarray
    gamma_n: np.ndarray
    log_prob: float
    continuation_log_prob: float


def ctc_prefix_score(
    emissions: EmissionMatrix, prefix: Iterable[int], blank: int = BLANK
) -> CtcPrefixResult:
    """Score one label prefix against the emissions.

    ``log_prob`` is the probability that the prefix is the entire emitted
    sequence (all T frames consumed); ``continuation_log_prob`` is the mass
    of alignments that realize the prefix with arbitrary continuation, the
    quantity beam search ranks live hypotheses by. A prefix longer than T
    scores -inf rather than raising.
    """
    prefix = tuple(prefix)
    if blank in prefix:
        raise DecodingError("prefix must not contain the blank id")
    scorer = CtcPrefixScorer(emissions, blank=blank)
    state = scorer.state_for(prefix)
    return CtcPrefixResult(
        gamma_b=state.gamma_b,
        gamma_n=state.gamma_n,
        log_prob=scorer.full_log_prob(state),
        continuation_log_prob=state.log_psi,
    )


class AttentionScorer(Protocol):
    """Label-synchronous step scorer: log-probabilities of the next output id.

    Slot 0 of the returned vector is end-of-sequence; slots 1..vocab_size-1
    are tokens. Every returned vector must be a normalized log distribution
    (logsumexp 0 within 1e-6).
    """

    vocab_size: int

    def score_step(self, prefix: tuple[int, ...]) -> np.ndarray: ...


class UniformAttentionScorer:
    """Flat scorer: every next id equally likely. Neutralizes the attention
    branch for pure-CTC comparisons and smoke tests."""

    def __init__(self, vocab_size: int):
        if vocab_size < 2:
            raise DecodingError("vocab_size must be at least 2")
        self.vocab_size = vocab_size
        self._row = np.full(vocab_size, -math.log(vocab_size))

    def score_step(self, prefix: tuple[int, ...]) -> np.ndarray:
        return self._row


class PositionalAttentionScorer:
    """Table-driven scorer keyed by output position: one log-prob row per
    prefix length, clamping to the last row for longer prefixes."""

    def __init__(self, log_rows: np.ndarray):
        log_rows = np.asarray(log_rows, dtype=np.float64)
        _check_log_rows(log_rows, "attention score table")
        self.log_rows = log_rows
        self.vocab_size = log_rows.shape[1]

    @classmethod
    def from_probs(cls, probs: np.ndarray) -> "PositionalAttentionScorer":
        probs = np.asarray(probs, dtype=np.float64)
        if np.isnan(probs).any() or (probs < 0).any():
            raise DecodingError("attention table probabilities must be non-negative")
        with np.errstate(divide="ignore"):
            return cls(np.log(probs))

    def score_step(self, prefix: tuple[int, ...]) -> np.ndarray:
        return self.log_rows[min(len(prefix), len(self.log_rows) - 1)]


class SeededAttentionScorer:
    """Deterministic pseudo-random scorer keyed by (seed, prefix).

    Prefix-sensitive and platform-stable without any trained model; used to
    stress the search with non-degenerate attention scores.
    """

    def __init__(self, vocab_size: int, seed: int):
        if vocab_size < 2:
            raise DecodingError("vocab_size must be at least 2")
        self.vocab_size = vocab_size
        self.seed = seed
        self._cache: dict[tuple[int, ...], np.ndarray] = {}

    def score_step(self, prefix: tuple[int, ...]) -> np.ndarray:
        row = self._cache.get(prefix)
        if row is None:
            key = f"{self.seed}:{','.join(map(str, prefix))}".encode()
            rng = random.Random(int.from_bytes(hashlib.sha256(key).digest()[:8], "big"))
            # Exponential draws renormalize to a Dirichlet(1) sample: no zeros.
            mass = [-math.log(rng.random()) for _ in range(self.vocab_size)]
            total = sum(mass)
            row = np.log(np.array(mass) / total)
            self._cache[prefix] = row
        return row


def mix_scores(ctc_weight: float, ctc: float, att: float) -> float:
    """Weighted joint score lambda*ctc + (1-lambda)*att.

    Zero-weighted branches are dropped rather than multiplied so a -inf
    score on an unused branch cannot turn the result into NaN; the endpoint
    values therefore reduce exactly to the single remaining branch.
    """
    if ctc_weight == 0.0:
        return att
    if ctc_weight == 1.0:
        return ctc
    return ctc_weight * ctc + (1.0 - ctc_weight) * att


@dataclass(frozen=True)
class BeamHypothesis:
    """A decode candidate: token ids (no blanks) plus its score breakdown."""

    tokens: tuple[int, ...]
    joint_score: float
    ctc_log: float
    att_log: float
    finished: bool

    def sort_key(self) -> tuple[float, tuple[int, ...]]:
        return (-self.joint_score, self.tokens)


@dataclass(frozen=True)
class _LiveHyp:
    tokens: tuple[int, ...]
    ctc_state: CtcPrefixState
    att_sum: float
    score: float


def _validate_search_args(
    emissions: EmissionMatrix,
    scorer: AttentionScorer,
    ctc_weight: float,
    beam_size: int,
    max_len: int,
) -> None:
    if scorer.vocab_size != emissions.vocab_size:
        raise DecodingError(
            f"attention scorer covers {scorer.vocab_size} ids but emissions "
            f"have {emissions.vocab_size} symbols"
        )
    if beam_size < 1:
        raise DecodingError(f"beam size must be >= 1, got {beam_size}")
    if max_len < 0:
        raise DecodingError(f"max_len must be >= 0, got {max_len}")
    if not 0.0 <= ctc_weight <= 1.0:
        raise DecodingError(f"ctc_weight must be in [0, 1], got {ctc_weight}")


def beam_search(
    emissions: EmissionMatrix,
    scorer: AttentionScorer,
    ctc_weight: float = 0.3,
    beam_size: int = 40,
    max_len: int | None = None,
    blank: int = BLANK,
) -> list[BeamHypothesis]:
    """Label-synchronous beam search over the joint CTC/attention score.

    At each length, every live hypothesis is finalized with end-of-sequence
    (its full-sequence CTC probability replaces the continuation mass) into
    a finished pool, then extended by every non-blank token; extensions are
    pruned to ``beam_size`` by joint score. ``max_len`` defaults to the
    frame count, the longest sequence CTC can emit. Returns all finished
    hypotheses best-first; score ties order by token sequence.
    """
    if max_len is None:
        max_len = emissions.num_frames
    _validate_search_args(emissions, scorer, ctc_weight, beam_size, max_len)
    ctc = CtcPrefixScorer(emissions, blank=blank)
    live = [
        _LiveHyp(
            tokens=(),
            ctc_state=ctc.initial_state(),
            att_sum=0.0,
            score=mix_scores(ctc_weight, 0.0, 0.0),
        )
    ]
    finished: list[BeamHypothesis] = []
    for length in range(max_len + 1):
        candidates: list[_LiveHyp] = []
        for hyp in live:
            att_row = scorer.score_step(hyp.tokens)
            full_ctc = ctc.full_log_prob(hyp.ctc_state)
            att_total = hyp.att_sum + float(att_row[EOS])
            finished.append(
                BeamHypothesis(
                    tokens=hyp.tokens,
                    joint_score=mix_scores(ctc_weight, full_ctc, att_total),
                    ctc_log=full_ctc,
                    att_log=att_total,
                    finished=True,
                )
            )
            if length == max_len:
                continue
            for token in range(ctc.vocab_size):
                if token == ctc.blank:
                    continue
                new_state = ctc.extend(hyp.ctc_state, token)
                att_sum = hyp.att_sum + float(att_row[token])
                candidates.append(
                    _LiveHyp(
                        tokens=(*hyp.tokens, token),
                        ctc_state=new_state,
                        att_sum=att_sum,
                        score=mix_scores(ctc_weight, new_state.log_psi, att_sum),
                    )
                )
        if length == max_len:
            break
        # Children of distinct prefixes are distinct, so no dedup is needed.
        candidates.sort(key=lambda h: (-h.score, h.tokens))
        live = candidates[:beam_size]
        if not live:
            break
    finished.sort(key=BeamHypothesis.sort_key)
    return finished


def exhaustive_rank(
    emissions: EmissionMatrix,
    scorer: AttentionScorer,
    ctc_weight: float,
    max_len: int,
    blank: int = BLANK,
) -> list[BeamHypothesis]:
    """Score every token sequence of length 0..max_len and rank them all.

    Each sequence is scored through the same incremental state chain and the
    same mixing arithmetic as ``beam_search``, so an unpruned beam agrees
    with this ranking float for float. Enumeration is guarded to keep small
    test instances small: V^max_len may not exceed one million.
    """
    _validate_search_args(emissions, scorer, ctc_weight, beam_size=1, max_len=max_len)
    if emissions.vocab_size ** max_len > _EXHAUSTIVE_LIMIT:
        raise DecodingError(
            f"V^max_len = {emissions.vocab_size ** max_len} exceeds the "
            f"enumeration guard of {_EXHAUSTIVE_LIMIT}"
        )
    ctc = CtcPrefixScorer(emissions, blank=blank)
    tokens = [t for t in range(ctc.vocab_size) if t != ctc.blank]
    results: list[BeamHypothesis] = []

    def visit(prefix: tuple[int, ...], state: CtcPrefixState, att_sum: float) -> None:
        att_row = scorer.score_step(prefix)
        full_ctc = ctc.full_log_prob(state)
        att_total = att_sum + float(att_row[EOS])
        results.append(
            BeamHypothesis(
                tokens=prefix,
                joint_score=mix_scores(ctc_weight, full_ctc, att_total),
                ctc_log=full_ctc,
                att_log=att_total,
                finished=True,
            )
        )
        if len(prefix) == max_len:
            return
        for token in tokens:
            visit((*prefix, token), ctc.extend(state, token), att_sum + float(att_row[token]))

    visit((), ctc.initial_state(), 0.0)
    results.sort(key=BeamHypothesis.sort_key)
    return results


def exhaustive_decode(
    emissions: EmissionMatrix,
    scorer: AttentionScorer,
    ctc_weight: float,
    max_len: int,
    blank: int = BLANK,
) -> BeamHypothesis:
    """Ground-truth best hypothesis by full enumeration (see exhaustive_rank)."""
    return exhaustive_rank(emissions, scorer, ctc_weight, max_len, blank=blank)[0]


def enumerate_sequence_log_probs(
    emissions: EmissionMatrix, blank: int = BLANK
) -> dict[tuple[int, ...], float]:
    """Brute-force CTC distribution over label sequences.

    Walks all V^T frame-level paths, collapses each (merge repeats, then
    drop blanks), and accumulates path probabilities per collapsed sequence.
    Exponential in T; exists as an independent oracle for the prefix
    recursion on tiny instances.
    """
    T, V = emissions.num_frames, emissions.vocab_size
    if V ** T > _EXHAUSTIVE_LIMIT:
        raise DecodingError(f"V^T = {V ** T} exceeds the enumeration guard")
    log_probs = emissions.log_probs
    out: dict[tuple[int, ...], float] = {}
    for path in itertools.product(range(V), repeat=T):
        lp = float(sum(log_probs[t, s] for t, s in enumerate(path)))
        collapsed: list[int] = []
        prev: int | None = None
        for s in path:
            if s != prev and s != blank:
                collapsed.append(s)
            prev = s
        key = tuple(collapsed)
        out[key] = float(np.logaddexp(out[key], lp)) if key in out else lp
    return out
