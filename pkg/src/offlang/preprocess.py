"""Tweet cleaning: entity stripping, emoji substitution, hashtag segmentation, normalization.

The full pipeline iterates its four steps to a fixpoint so that the result is
idempotent even when punctuation removal re-exposes mention or hashtag shapes
(e.g. ``@.user`` -> ``@user`` -> removed).
"""

from __future__ import annotations

import re
import string
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path

MENTION_RE = re.compile(r"@\w+")
URL_RE = re.compile(r"(?:https?://|\bwww\.)\S+", re.IGNORECASE)
HASHTAG_RE = re.compile(r"#(\w+)")
_WS_RE = re.compile(r"\s+")
_CAMEL_RE = re.compile(r"[0-9]+|[A-Z]+(?![a-z])|[A-Z][a-z]*|[a-z]+")

# ASCII punctuation is deleted outright; '@' and '#' carry tweet semantics and stay.
REMOVED_PUNCT = "".join(c for c in string.punctuation if c not in "@#")
_PUNCT_TABLE = str.maketrans("", "", REMOVED_PUNCT)

# Code point ranges treated as emoji: substituted when in the table, removed otherwise.
EMOJI_RANGES = (
    (0x200D, 0x200D),  # zero-width joiner
    (0x2300, 0x23FF),
    (0x25A0, 0x25FF),
    (0x2600, 0x26FF),
    (0x2700, 0x27BF),
    (0x2B00, 0x2BFF),
    (0xFE00, 0xFE0F),  # variation selectors
    (0x1F1E6, 0x1F1FF),
    (0x1F300, 0x1F5FF),
    (0x1F600, 0x1F64F),
    (0x1F680, 0x1F6FF),
    (0x1F700, 0x1F77F),
    (0x1F780, 0x1F8FF),
    (0x1F900, 0x1F9FF),
    (0x1FA00, 0x1FAFF),
)
_EMOJI_CHAR_RE = re.compile(
    "[" + "".join(f"{chr(lo)}-{chr(hi)}" for lo, hi in EMOJI_RANGES) + "]"
)

_STEP_NAMES = ("strip_entities", "substitute_emoji", "segment_hashtags", "normalize")


class EmojiTableError(ValueError):
    """The emoji substitution table file is malformed."""


@dataclass(frozen=True)
class CleanText:
    """Pipeline output: cleaned text plus the ordered step names that produced it."""

    text: str
    provenance: tuple[str, ...] = ()


def is_emoji_char(ch: str) -> bool:
    cp = ord(ch)
    return any(lo <= cp <= hi for lo, hi in EMOJI_RANGES)


def load_emoji_table(path: str | Path) -> dict[str, str]:
    """Read an ``emoji<TAB>short_name`` table; ``#`` comment lines and blanks allowed."""
    table: dict[str, str] = {}
    for i, raw in enumerate(Path(path).read_text(encoding="utf-8").split("\n"), start=1):
        line = raw.rstrip("\r")
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2 or not parts[0] or not parts[1]:
            raise EmojiTableError(f"emoji table line {i}: expected 'emoji<TAB>name', got {raw!r}")
        table[parts[0]] = parts[1]
    return table


@lru_cache(maxsize=1)
def default_emoji_table() -> dict[str, str]:
    with resources.as_file(resources.files("offlang").joinpath("data/emoji_names.tsv")) as p:
        return load_emoji_table(p)


def strip_entities(text: str) -> str:
    """Remove @-mention tokens and scheme/www URLs, collapsing the gaps they leave."""
    new = URL_RE.sub(" ", text)
    new = MENTION_RE.sub(" ", new)
    if new == text:
        return text
    return _WS_RE.sub(" ", new).strip()


def _segment_body(body: str) -> str:
    if "_" in body:
        words = [w for w in body.split("_") if w]
    else:
        words = _CAMEL_RE.findall(body)
    if not words:
        return body.lower()
    return " ".join(w.lower() for w in words)


def segment_hashtags(text: str) -> str:
    """Split camel-cased/underscored hashtag bodies into lowercase words; drop the ``#``.

    Digit runs count as word boundaries; unsegmentable bodies keep their single
    word, lowercased.
    """
    return HASHTAG_RE.sub(lambda m: _segment_body(m.group(1)), text)


def substitute_emoji(text: str, table: dict[str, str] | None = None) -> str:
    """Replace table emoji with space-padded names and delete any other emoji."""
    if not _EMOJI_CHAR_RE.search(text):
        return text
    if table is None:
        table = default_emoji_table()
    for key in sorted(table, key=len, reverse=True):
        if key in text:
            text = text.replace(key, f" {table[key]} ")
    text = _EMOJI_CHAR_RE.sub(" ", text)
    return _WS_RE.sub(" ", text).strip()


def normalize(text: str) -> str:
    """Lowercase, delete the removal punctuation set, collapse and trim whitespace."""
    return _WS_RE.sub(" ", text.lower().translate(_PUNCT_TABLE)).strip()


def preprocess(text: str, table: dict[str, str] | None = None) -> CleanText:
    """Full cleaning pipeline, iterated to a fixpoint (hence idempotent).

    Each pass applies strip_entities, substitute_emoji, segment_hashtags and
    normalize in that order; extra passes only fire when a pass manufactures a
    new mention/hashtag shape, and each such pass consumes at least one ``@``
    or ``#``, so iteration terminates.
    """
    provenance: list[str] = []
    cur = text
    while True:
        before = cur
        cur = strip_entities(cur)
        cur = substitute_emoji(cur, table)
        cur = segment_hashtags(cur)
        cur = normalize(cur)
        provenance.extend(_STEP_NAMES)
        if cur == before:
            break
    return CleanText(cur, tuple(provenance))
