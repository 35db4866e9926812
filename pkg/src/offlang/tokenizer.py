"""Corpus-derived word vocabulary and fixed-length id sequences with attention masks.

Tokens are whitespace-split words from cleaned text. Special ids are fixed:
PAD=0, UNK=1, CLS=2, SEP=3, and (only when built for masked-LM training)
MASK=4; content ids follow the specials. SEP is reserved but never emitted.
"""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .preprocess import CleanText

PAD_ID, UNK_ID, CLS_ID, SEP_ID, MASK_ID = 0, 1, 2, 3, 4
PAD_TOKEN, UNK_TOKEN, CLS_TOKEN, SEP_TOKEN, MASK_TOKEN = (
    "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]",
)
_BASE_SPECIALS = (PAD_TOKEN, UNK_TOKEN, CLS_TOKEN, SEP_TOKEN)
MAX_LEN = 150


@dataclass(frozen=True, eq=False)
class Vocabulary:
    """Immutable token<->id bijection with a fixed special-id layout."""

    tokens: tuple[str, ...]  # token at index id
    has_mask: bool

    def __post_init__(self):
        expected = _BASE_SPECIALS + ((MASK_TOKEN,) if self.has_mask else ())
        if self.tokens[: len(expected)] != expected:
            raise ValueError(f"special tokens must open the vocabulary: {self.tokens[:5]}")
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")

    @property
    def size(self) -> int:
        return len(self.tokens)

    @property
    def mask_id(self) -> int | None:
        return MASK_ID if self.has_mask else None

    @property
    def first_content_id(self) -> int:
        return MASK_ID + 1 if self.has_mask else SEP_ID + 1

    def id_of(self, token: str) -> int:
        return self._index().get(token, UNK_ID)

    def token_of(self, idx: int) -> str:
        if not 0 <= idx < self.size:
            raise ValueError(f"id {idx} out of range for vocabulary of size {self.size}")
        return self.tokens[idx]

    def _index(self) -> dict[str, int]:
        cached = getattr(self, "_idx", None)
        if cached is None:
            cached = {tok: i for i, tok in enumerate(self.tokens)}
            object.__setattr__(self, "_idx", cached)
        return cached


@dataclass(frozen=True, eq=False)
class TokenSequence:
    """CLS-prefixed ids padded to ``max_len`` with the matching attention mask."""

    ids: np.ndarray
    mask: np.ndarray
    true_len: int

    def __post_init__(self):
        if self.ids.shape != self.mask.shape or self.ids.ndim != 1:
            raise ValueError("ids and mask must be 1-D arrays of equal length")
        if not (1 <= self.true_len <= len(self.ids)):
            raise ValueError(f"true_len {self.true_len} out of range")


def _texts(corpus: Iterable[CleanText | str]) -> list[str]:
    return [t.text if isinstance(t, CleanText) else t for t in corpus]


def build_vocab(
    corpus: Sequence[CleanText | str],
    min_freq: int = 1,
    max_size: int = 30000,
    include_mask: bool = False,
) -> Vocabulary:
    """Whitespace-tokenize the corpus and keep tokens with frequency >= min_freq,
    ranked by (frequency desc, token asc) and truncated to the special-adjusted cap.
    """
    if min_freq < 1:
        raise ValueError(f"min_freq must be >= 1, got {min_freq}")
    n_specials = len(_BASE_SPECIALS) + (1 if include_mask else 0)
    if max_size <= n_specials:
        raise ValueError(f"max_size must exceed the {n_specials} special slots")
    texts = _texts(corpus)
    if not texts:
        raise ValueError("empty corpus")
    freq = Counter()
    for text in texts:
        freq.update(text.split())
    kept = sorted(
        (tok for tok, n in freq.items() if n >= min_freq),
        key=lambda tok: (-freq[tok], tok),
    )[: max_size - n_specials]
    specials = _BASE_SPECIALS + ((MASK_TOKEN,) if include_mask else ())
    return Vocabulary(specials + tuple(kept), include_mask)


def encode(text: CleanText | str, vocab: Vocabulary, max_len: int = MAX_LEN) -> TokenSequence:
    """Map to ids with UNK fallback, prepend CLS, truncate keeping the prefix, pad."""
    words = (text.text if isinstance(text, CleanText) else text).split()
    ids = [CLS_ID] + [vocab.id_of(w) for w in words]
    ids = ids[:max_len]
    true_len = len(ids)
    arr = np.full(max_len, PAD_ID, dtype=np.int64)
    arr[:true_len] = ids
    mask = np.zeros(max_len, dtype=np.int64)
    mask[:true_len] = 1
    return TokenSequence(arr, mask, true_len)


def decode(ids: Iterable[int], vocab: Vocabulary) -> str:
    """Drop special ids and join the remaining tokens with single spaces."""
    words = []
    for idx in ids:
        idx = int(idx)
        if idx >= vocab.size or idx < 0:
            raise ValueError(f"id {idx} out of range for vocabulary of size {vocab.size}")
        if idx >= vocab.first_content_id:
            words.append(vocab.tokens[idx])
    return " ".join(words)


def serialize_vocab(vocab: Vocabulary) -> str:
    return "".join(f"{tok}\t{i}\n" for i, tok in enumerate(vocab.tokens))


def vocab_hash(vocab: Vocabulary) -> str:
    return hashlib.sha256(serialize_vocab(vocab).encode("utf-8")).hexdigest()


def save_vocab(vocab: Vocabulary, path: str | Path) -> None:
    Path(path).write_text(serialize_vocab(vocab), encoding="utf-8", newline="")


def load_vocab(path: str | Path) -> Vocabulary:
    tokens: list[str] = []
    for i, raw in enumerate(Path(path).read_text(encoding="utf-8").split("\n")):
        if raw == "":
            continue
        parts = raw.split("\t")
        if len(parts) != 2:
            raise ValueError(f"vocab line {i + 1}: expected 'token<TAB>id'")
        tok, idx = parts
        if int(idx) != len(tokens):
            raise ValueError(f"vocab line {i + 1}: ids must be contiguous from 0")
        tokens.append(tok)
    has_mask = len(tokens) > MASK_ID and tokens[MASK_ID] == MASK_TOKEN
    return Vocabulary(tuple(tokens), has_mask)
