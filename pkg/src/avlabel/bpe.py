"""Byte-pair-encoding subword tokenizer over normalized text.

Words are split on spaces after normalization; the first character of each
word is fused with the word-boundary marker into a single symbol, so "casa"
starts as ["▁c", "a", "s", "a"]. Merges are learned greedily by pair
frequency and replayed in order at encode time. Ids are stable for a given
model: specials first, then base symbols sorted lexicographically, then one
id per merge in learned order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

from .metrics import normalize_text

MARKER = "▁"
UNK_GLYPH = "⁇"

UNK, BOS, EOS, PAD = 0, 1, 2, 3
SPECIALS = ("<unk>", "<s>", "</s>", "<pad>")

_FORMAT_NAME = "bpe"
_FORMAT_VERSION = 1


class BpeError(ValueError):
    """Invalid training request or unreadable model file."""


def word_to_symbols(word: str) -> tuple[str, ...]:
    """Initial symbol sequence for one word: marker fused onto the first char."""
    if not word:
        return ()
    chars = list(word)
    return (MARKER + chars[0], *chars[1:])


def _merge_word(symbols: tuple[str, ...], pair: tuple[str, str]) -> tuple[str, ...]:
    """Replace non-overlapping occurrences of ``pair``, scanning left to right."""
    left, right = pair
    out: list[str] = []
    i = 0
    while i < len(symbols):
        if i + 1 < len(symbols) and symbols[i] == left and symbols[i + 1] == right:
            out.append(left + right)
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return tuple(out)


@dataclass(frozen=True)
class BpeModel:
    """A trained subword inventory: base symbols plus an ordered merge list."""

    base_symbols: tuple[str, ...]
    merges: tuple[tuple[str, str], ...]
    target_size: int
    truncated: bool

    def __post_init__(self) -> None:
        if tuple(sorted(self.base_symbols)) != self.base_symbols:
            raise BpeError("base_symbols must be lexicographically sorted")
        if len(set(self.base_symbols)) != len(self.base_symbols):
            raise BpeError("base_symbols must be unique")

    @property
    def vocab(self) -> tuple[str, ...]:
        return (*SPECIALS, *self.base_symbols, *(l + r for l, r in self.merges))

    @property
    def vocab_size(self) -> int:
        return len(SPECIALS) + len(self.base_symbols) + len(self.merges)

    def save(self) -> str:
        """Serialize to a line-oriented TSV text format (symbols contain no tabs)."""
        lines = [
            f"{_FORMAT_NAME}\t{_FORMAT_VERSION}",
            f"target_size\t{self.target_size}",
            f"truncated\t{int(self.truncated)}",
        ]
        lines.extend(f"base\t{sym}" for sym in self.base_symbols)
        lines.extend(f"merge\t{left}\t{right}" for left, right in self.merges)
        return "\n".join(lines) + "\n"

    @classmethod
    def load(cls, text: str) -> "BpeModel":
        lines = text.splitlines()
        if not lines:
            raise BpeError("empty model file")
        head = lines[0].split("\t")
        if len(head) != 2 or head[0] != _FORMAT_NAME:
            raise BpeError(f"not a {_FORMAT_NAME} model file")
        if head[1] != str(_FORMAT_VERSION):
            raise BpeError(f"unsupported model version {head[1]!r}")
        target_size: int | None = None
        truncated: bool | None = None
        base: list[str] = []
        merges: list[tuple[str, str]] = []
        for lineno, line in enumerate(lines[1:], start=2):
            parts = line.split("\t")
            tag = parts[0]
            if tag == "target_size" and len(parts) == 2:
                target_size = int(parts[1])
            elif tag == "truncated" and len(parts) == 2 and parts[1] in ("0", "1"):
                truncated = parts[1] == "1"
            elif tag == "base" and len(parts) == 2 and parts[1]:
                base.append(parts[1])
            elif tag == "merge" and len(parts) == 3 and parts[1] and parts[2]:
                merges.append((parts[1], parts[2]))
            else:
                raise BpeError(f"line {lineno}: unrecognized model line {line!r}")
        if target_size is None or truncated is None:
            raise BpeError("model file missing target_size or truncated header")
        return cls(tuple(base), tuple(merges), target_size, truncated)


class BpeTokenizer:
    """Encode/decode against a trained model; pure function of the model."""

    def __init__(self, model: BpeModel):
        self.model = model
        self._sym_to_id = {sym: i for i, sym in enumerate(model.vocab)}
        self._id_to_sym = model.vocab
        self._word_cache: dict[str, tuple[int, ...]] = {}

    def _encode_word(self, word: str) -> tuple[int, ...]:
        cached = self._word_cache.get(word)
        if cached is not None:
            return cached
        symbols = word_to_symbols(word)
        for pair in self.model.merges:
            if len(symbols) < 2:
                break
            symbols = _merge_word(symbols, pair)
        ids = tuple(self._sym_to_id.get(sym, UNK) for sym in symbols)
        self._word_cache[word] = ids
        return ids

    def encode(self, text: str, add_bos_eos: bool = False) -> list[int]:
        """Token ids for the normalized text; unknown symbols map to <unk>."""
        ids: list[int] = []
        for word in normalize_text(text).split():
            ids.extend(self._encode_word(word))
        if add_bos_eos:
            return [BOS, *ids, EOS]
        return ids

    def decode(self, ids: Sequence[int]) -> str:
        """Text for a token id sequence.

        <s>/</s>/<pad> are dropped; <unk> renders as the interrobang
        placeholder so unknowns stay visible in output.
        """
        pieces: list[str] = []
        for i in ids:
            if i in (BOS, EOS, PAD):
                continue
            if not 0 <= i < len(self._id_to_sym):
                raise BpeError(f"token id {i} out of range for vocab of {len(self._id_to_sym)}")
            pieces.append(UNK_GLYPH if i == UNK else self._id_to_sym[i])
        return "".join(pieces).replace(MARKER, " ").strip()


def train_bpe(corpus: Iterable[str], target_size: int) -> BpeModel:
    """Learn merges until the vocabulary reaches ``target_size`` ids.

    The most frequent adjacent symbol pair merges first; frequency ties break
    toward the lexicographically smallest pair, so training is deterministic.
    If pairs run out early the model is marked truncated.
    """
    word_freq: dict[str, int] = {}
    for line in corpus:
        for word in normalize_text(line).split():
            word_freq[word] = word_freq.get(word, 0) + 1
    if not word_freq:
        raise BpeError("corpus has no words after normalization")

    base = tuple(sorted({sym for w in word_freq for sym in word_to_symbols(w)}))
    floor = len(SPECIALS) + len(base)
    if target_size < floor:
        raise BpeError(
            f"target_size {target_size} is below the minimum {floor} "
            f"({len(SPECIALS)} specials + {len(base)} base symbols)"
        )

    words: dict[str, tuple[str, ...]] = {w: word_to_symbols(w) for w in word_freq}
    merges: list[tuple[str, str]] = []
    truncated = False
    while floor + len(merges) < target_size:
        pair_counts: dict[tuple[str, str], int] = {}
        for w, symbols in words.items():
            freq = word_freq[w]
            for a, b in zip(symbols, symbols[1:]):
                pair_counts[(a, b)] = pair_counts.get((a, b), 0) + freq
        if not pair_counts:
            truncated = True
            break
        best = min(pair_counts.items(), key=lambda kv: (-kv[1], kv[0]))[0]
        merges.append(best)
        words = {w: _merge_word(s, best) for w, s in words.items()}
    return BpeModel(base, tuple(merges), target_size, truncated)
