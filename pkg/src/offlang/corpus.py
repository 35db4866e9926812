"""OLID-format corpus handling: parsing, the A/B/C label schema, splits and resampling.

The input dialect is a UTF-8 TSV with header ``id\ttweet\tsubtask_a\tsubtask_b\tsubtask_c``,
the literal string ``NULL`` marking absent labels, and ``\n`` line endings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

HEADER = "id\ttweet\tsubtask_a\tsubtask_b\tsubtask_c"
NULL = "NULL"


class LabelA(str, Enum):
    NOT = "NOT"
    OFF = "OFF"


class LabelB(str, Enum):
    UNT = "UNT"
    TIN = "TIN"


class LabelC(str, Enum):
    IND = "IND"
    GRP = "GRP"
    OTH = "OTH"


# Canonical class orders; argmax tie-breaks and report rows follow these.
LEVELS = ("A", "B", "C")
LEVEL_ENUM = {"A": LabelA, "B": LabelB, "C": LabelC}
CLASS_ORDER = {
    "A": ("NOT", "OFF"),
    "B": ("UNT", "TIN"),
    "C": ("IND", "GRP", "OTH"),
}


class OlidError(ValueError):
    """Base error for corpus-level failures, optionally tied to a 1-based line number."""

    def __init__(self, message: str, line_no: int | None = None):
        self.base_message = message
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)

    def with_line(self, line_no: int) -> "OlidError":
        return type(self)(self.base_message, line_no)


class MalformedRowError(OlidError):
    pass


class UnknownLabelError(OlidError):
    pass


class HierarchyViolationError(OlidError):
    pass


class SingleClassError(OlidError):
    pass


class EmptyClassError(OlidError):
    pass


@dataclass(frozen=True)
class TweetRecord:
    """One tweet with hierarchical labels. ``b`` exists iff a=OFF, ``c`` iff b=TIN."""

    id: str
    text: str
    a: LabelA
    b: LabelB | None = None
    c: LabelC | None = None

    def __post_init__(self):
        if not self.text.strip():
            raise MalformedRowError(f"record {self.id!r}: empty tweet text")
        if (self.b is not None) != (self.a == LabelA.OFF):
            raise HierarchyViolationError(
                f"record {self.id!r}: subtask_b must be present exactly when a=OFF "
                f"(a={self.a.value}, b={_opt(self.b)})"
            )
        if (self.c is not None) != (self.b == LabelB.TIN):
            raise HierarchyViolationError(
                f"record {self.id!r}: subtask_c must be present exactly when b=TIN "
                f"(b={_opt(self.b)}, c={_opt(self.c)})"
            )

    def label_at(self, level: str) -> str | None:
        """Label value at a level, or None where the hierarchy leaves it absent."""
        if level == "A":
            return self.a.value
        if level == "B":
            return self.b.value if self.b is not None else None
        if level == "C":
            return self.c.value if self.c is not None else None
        raise ValueError(f"unknown level {level!r}")


def _opt(label) -> str:
    return label.value if label is not None else "NULL"


@dataclass(frozen=True)
class ClassDistribution:
    """Per-class record counts of one level's projection."""

    level: str
    counts: dict[str, int]

    @property
    def total(self) -> int:
        return sum(self.counts.values())


@dataclass(frozen=True)
class SplitSpec:
    """How to obtain the train/test partition.

    ``file`` passes through the dataset's own files; ``ratio`` shuffles and cuts
    at round(ratio * N), deterministically in ``seed``.
    """

    mode: str = "file"
    ratio: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("file", "ratio"):
            raise ValueError(f"split mode must be 'file' or 'ratio', got {self.mode!r}")
        if self.mode == "ratio" and not (0.0 < self.ratio < 1.0):
            raise ValueError(f"split ratio must be in (0,1), got {self.ratio}")


def _parse_label(enum_cls, token: str, line_no: int):
    try:
        return enum_cls(token)
    except ValueError:
        expected = "/".join(m.value for m in enum_cls)
        raise UnknownLabelError(
            f"unknown {enum_cls.__name__} token {token!r} (expected {expected} or NULL)",
            line_no,
        ) from None


def parse_olid(text: str) -> list[TweetRecord]:
    """Parse OLID TSV content into validated records, preserving row order.

    Raises MalformedRowError / UnknownLabelError / HierarchyViolationError with
    the offending 1-based line number.
    """
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()  # trailing newline
    if not lines:
        raise MalformedRowError("empty file: missing header", 1)
    header = lines[0].rstrip("\r")
    if header != HEADER:
        raise MalformedRowError(f"bad header {header!r}, expected {HEADER!r}", 1)

    records = []
    for i, raw in enumerate(lines[1:], start=2):
        line = raw.rstrip("\r")
        parts = line.split("\t")
        if len(parts) != 5:
            raise MalformedRowError(f"expected 5 tab-separated columns, got {len(parts)}", i)
        rid, tweet, col_a, col_b, col_c = parts
        a = _parse_label(LabelA, col_a, i)
        b = None if col_b == NULL else _parse_label(LabelB, col_b, i)
        c = None if col_c == NULL else _parse_label(LabelC, col_c, i)
        try:
            records.append(TweetRecord(rid, tweet, a, b, c))
        except OlidError as exc:
            raise exc.with_line(i) from None
    return records


def read_olid(path: str | Path) -> list[TweetRecord]:
    return parse_olid(Path(path).read_text(encoding="utf-8"))


def format_olid(records: Sequence[TweetRecord]) -> str:
    """Serialize records back to the input TSV dialect."""
    out = [HEADER]
    for r in records:
        out.append(f"{r.id}\t{r.text}\t{r.a.value}\t{_opt(r.b)}\t{_opt(r.c)}")
    return "\n".join(out) + "\n"


def write_olid(records: Sequence[TweetRecord], path: str | Path) -> None:
    Path(path).write_text(format_olid(records), encoding="utf-8", newline="")


def project(records: Sequence[TweetRecord], level: str) -> list[TweetRecord]:
    """Records participating at a level: all for A, OFF rows for B, TIN rows for C."""
    if level == "A":
        return list(records)
    if level == "B":
        return [r for r in records if r.a == LabelA.OFF]
    if level == "C":
        return [r for r in records if r.b == LabelB.TIN]
    raise ValueError(f"unknown level {level!r}")


def class_counts(records: Sequence[TweetRecord], level: str) -> ClassDistribution:
    """Label counts over the projection at ``level``; every class appears, zeros kept."""
    counts = {label: 0 for label in CLASS_ORDER[level]}
    for r in project(records, level):
        counts[r.label_at(level)] += 1
    return ClassDistribution(level, counts)


def split(
    records: Sequence[TweetRecord],
    spec: SplitSpec,
    test_records: Sequence[TweetRecord] | None = None,
) -> tuple[list[TweetRecord], list[TweetRecord]]:
    """Produce the (train, test) partition.

    file mode passes through the dataset's own train/test lists (ids must be
    disjoint); ratio mode shuffles deterministically in ``spec.seed`` and takes
    the first round(ratio * N) records as train.
    """
    if spec.mode == "file":
        if test_records is None:
            raise ValueError("file-provided split mode requires test_records")
        overlap = {r.id for r in records} & {r.id for r in test_records}
        if overlap:
            raise ValueError(f"train/test id overlap: {sorted(overlap)[:5]}")
        return list(records), list(test_records)

    if test_records is not None:
        raise ValueError("ratio split mode does not accept test_records")
    n = len(records)
    if n < 2:
        raise ValueError(f"ratio split needs at least 2 records, got {n}")
    n_train = int(math.floor(spec.ratio * n + 0.5))  # round half up
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    order = rng.permutation(n)
    train = [records[i] for i in order[:n_train]]
    test = [records[i] for i in order[n_train:]]
    return train, test


def holdout_validation(
    records: Sequence[TweetRecord], frac: float, seed: int, level: str = "A"
) -> tuple[list[TweetRecord], list[TweetRecord]]:
    """Stratified (fit_set, valid_set) carve-out at ``level``, deterministic in seed.

    Every record must carry a label at the level. Per class the validation share
    is frac * count, rounded down for the largest class and up for the others
    (minority classes round up; count ties resolve by canonical class order).
    """
    if not (0.0 < frac < 1.0):
        raise ValueError(f"holdout fraction must be in (0,1), got {frac}")
    by_class: dict[str, list[TweetRecord]] = {label: [] for label in CLASS_ORDER[level]}
    for r in records:
        label = r.label_at(level)
        if label is None:
            raise ValueError(f"record {r.id!r} has no label at level {level}")
        by_class[label].append(r)
    for label, members in by_class.items():
        if not members:
            raise EmptyClassError(f"class {label} has 0 records at level {level}")

    majority = max(by_class, key=lambda lb: (len(by_class[lb]), -CLASS_ORDER[level].index(lb)))
    rng = np.random.Generator(np.random.PCG64(seed))
    fit_set: list[TweetRecord] = []
    valid_set: list[TweetRecord] = []
    for label in CLASS_ORDER[level]:
        members = by_class[label]
        raw = frac * len(members)
        n_valid = int(math.floor(raw)) if label == majority else int(math.ceil(raw))
        order = rng.permutation(len(members))
        chosen = set(order[:n_valid].tolist())
        for idx, rec in enumerate(members):
            (valid_set if idx in chosen else fit_set).append(rec)
    return fit_set, valid_set


def resample(
    records: Sequence[TweetRecord], level: str, mode: str, seed: int
) -> list[TweetRecord]:
    """Balance the level's classes: ``over`` duplicates up to the maximum count
    (with replacement), ``under`` samples down to the minimum (without).

    Expects records already projected to the level; deterministic in seed.
    """
    if mode not in ("over", "under"):
        raise ValueError(f"resample mode must be 'over' or 'under', got {mode!r}")
    by_class: dict[str, list[int]] = {}
    for idx, r in enumerate(records):
        label = r.label_at(level)
        if label is None:
            raise ValueError(f"record {r.id!r} has no label at level {level}")
        by_class.setdefault(label, []).append(idx)
    if len(by_class) < 2:
        raise SingleClassError(
            f"resampling needs at least 2 classes at level {level}, got {sorted(by_class)}"
        )

    rng = np.random.Generator(np.random.PCG64(seed))
    counts = {label: len(ix) for label, ix in by_class.items()}
    if mode == "over":
        target = max(counts.values())
        result = list(records)
        for label in CLASS_ORDER[level]:
            if label not in by_class:
                continue
            short = target - counts[label]
            if short > 0:
                extra = rng.choice(np.asarray(by_class[label]), size=short, replace=True)
                result.extend(records[i] for i in extra)
        return result

    target = min(counts.values())
    keep: set[int] = set()
    for label in CLASS_ORDER[level]:
        if label not in by_class:
            continue
        idxs = np.asarray(by_class[label])
        if len(idxs) > target:
            chosen = rng.choice(idxs, size=target, replace=False)
        else:
            chosen = idxs
        keep.update(chosen.tolist())
    return [r for i, r in enumerate(records) if i in keep]
