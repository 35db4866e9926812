from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from offlang.corpus import (
    HEADER,
    EmptyClassError,
    HierarchyViolationError,
    LabelA,
    LabelB,
    MalformedRowError,
    SingleClassError,
    SplitSpec,
    TweetRecord,
    UnknownLabelError,
    class_counts,
    format_olid,
    holdout_validation,
    parse_olid,
    project,
    resample,
    split,
)

from conftest import FIXTURE_A, FIXTURE_B, FIXTURE_C, make_record


def _tsv(*rows):
    return "\n".join([HEADER, *rows]) + "\n"


class TestParse:
    def test_off_unt_row(self):
        text = _tsv("86426\t@USER She should ask a few native Americans...\tOFF\tUNT\tNULL")
        (rec,) = parse_olid(text)
        assert rec.id == "86426"
        assert rec.a == LabelA.OFF and rec.b == LabelB.UNT and rec.c is None

    def test_not_row_has_no_optionals(self):
        (rec,) = parse_olid(_tsv("1\thello there\tNOT\tNULL\tNULL"))
        assert rec.b is None and rec.c is None

    def test_hierarchy_violation_reports_line(self):
        text = _tsv("1\tok tweet\tNOT\tNULL\tNULL", "2\tbad tweet\tNOT\tTIN\tNULL")
        with pytest.raises(HierarchyViolationError) as exc:
            parse_olid(text)
        assert exc.value.line_no == 3

    def test_off_without_b_is_violation(self):
        with pytest.raises(HierarchyViolationError):
            parse_olid(_tsv("1\tbad\tOFF\tNULL\tNULL"))

    def test_c_requires_tin(self):
        with pytest.raises(HierarchyViolationError):
            parse_olid(_tsv("1\tbad\tOFF\tUNT\tIND"))

    def test_unknown_label_token(self):
        with pytest.raises(UnknownLabelError) as exc:
            parse_olid(_tsv("1\ttweet\tMAYBE\tNULL\tNULL"))
        assert exc.value.line_no == 2

    def test_wrong_column_count(self):
        with pytest.raises(MalformedRowError) as exc:
            parse_olid(_tsv("1\tonly three cols\tNOT"))
        assert exc.value.line_no == 2

    def test_bad_header(self):
        with pytest.raises(MalformedRowError):
            parse_olid("id\ttext\ta\tb\tc\n1\tx\tNOT\tNULL\tNULL\n")

    def test_empty_text_rejected(self):
        with pytest.raises(MalformedRowError) as exc:
            parse_olid(_tsv("1\t   \tNOT\tNULL\tNULL"))
        assert exc.value.line_no == 2

    def test_row_order_preserved_and_roundtrip(self):
        text = _tsv(
            "5\tfirst tweet\tNOT\tNULL\tNULL",
            "2\tsecond tweet\tOFF\tTIN\tGRP",
            "9\tthird tweet\tOFF\tUNT\tNULL",
        )
        records = parse_olid(text)
        assert [r.id for r in records] == ["5", "2", "9"]
        assert format_olid(records) == text


class TestClassCounts:
    def test_level_a(self, fixture_records):
        assert class_counts(fixture_records, "A").counts == FIXTURE_A

    def test_level_b_counts_only_off(self, fixture_records):
        assert class_counts(fixture_records, "B").counts == FIXTURE_B

    def test_level_c_counts_only_tin(self, fixture_records):
        assert class_counts(fixture_records, "C").counts == FIXTURE_C

    def test_empty_list_all_zero(self):
        assert class_counts([], "C").counts == {"IND": 0, "GRP": 0, "OTH": 0}


class TestSplit:
    def test_ratio_sizes(self):
        records = [make_record(i, "NOT") for i in range(14100)]
        train, test = split(records, SplitSpec("ratio", 0.8, seed=3))
        assert len(train) == 11280 and len(test) == 2820

    def test_ratio_deterministic(self):
        records = [make_record(i, "NOT") for i in range(50)]
        a = split(records, SplitSpec("ratio", 0.8, seed=11))
        b = split(records, SplitSpec("ratio", 0.8, seed=11))
        assert [r.id for r in a[0]] == [r.id for r in b[0]]
        assert [r.id for r in a[1]] == [r.id for r in b[1]]

    def test_partition_disjoint_and_covering(self):
        records = [make_record(i, "NOT") for i in range(37)]
        train, test = split(records, SplitSpec("ratio", 0.6, seed=5))
        ids = sorted(r.id for r in train) + sorted(r.id for r in test)
        assert sorted(ids) == sorted(r.id for r in records)
        assert not set(r.id for r in train) & set(r.id for r in test)

    def test_file_mode_passthrough(self):
        train = [make_record(i, "NOT") for i in range(5)]
        test = [make_record(100 + i, "NOT") for i in range(2)]
        out_train, out_test = split(train, SplitSpec("file"), test)
        assert out_train == train and out_test == test

    def test_file_mode_rejects_overlap(self):
        train = [make_record(1, "NOT")]
        with pytest.raises(ValueError):
            split(train, SplitSpec("file"), [make_record(1, "NOT")])

    def test_ratio_needs_two_records(self):
        with pytest.raises(ValueError):
            split([make_record(1, "NOT")], SplitSpec("ratio", 0.5, 0))

    def test_invalid_ratio(self):
        with pytest.raises(ValueError):
            SplitSpec("ratio", 1.5, 0)


class TestHoldout:
    def test_stratified_counts(self):
        records = [make_record(i, "NOT") for i in range(80)]
        records += [make_record(100 + i, "OFF", "UNT") for i in range(20)]
        fit, valid = holdout_validation(records, 0.1, seed=4, level="A")
        valid_counts = Counter(r.a.value for r in valid)
        assert valid_counts == {"NOT": 8, "OFF": 2}
        assert len(fit) + len(valid) == 100

    def test_two_singletons_split_one_each_side(self):
        records = [make_record(1, "NOT"), make_record(2, "OFF", "UNT")]
        fit, valid = holdout_validation(records, 0.5, seed=0, level="A")
        assert len(fit) == 1 and len(valid) == 1

    def test_minority_rounds_up(self):
        records = [make_record(i, "NOT") for i in range(97)]
        records += [make_record(200 + i, "OFF", "UNT") for i in range(3)]
        fit, valid = holdout_validation(records, 0.1, seed=1, level="A")
        valid_counts = Counter(r.a.value for r in valid)
        # 0.3 rounds up for the minority class, 9.7 rounds down for the majority
        assert valid_counts == {"NOT": 9, "OFF": 1}

    def test_deterministic(self):
        records = [make_record(i, "NOT" if i % 3 else "OFF", "UNT" if i % 3 == 0 else None)
                   for i in range(60)]
        a = holdout_validation(records, 0.2, seed=9, level="A")
        b = holdout_validation(records, 0.2, seed=9, level="A")
        assert [r.id for r in a[0]] == [r.id for r in b[0]]
        assert [r.id for r in a[1]] == [r.id for r in b[1]]

    def test_empty_class_errors(self):
        records = [make_record(i, "NOT") for i in range(10)]
        with pytest.raises(EmptyClassError):
            holdout_validation(records, 0.1, seed=0, level="A")


class TestResample:
    def test_oversample_balances_to_max(self, fixture_records):
        out = resample(fixture_records, "A", "over", seed=2)
        assert class_counts(out, "A").counts == {"NOT": 120, "OFF": 120}

    def test_undersample_balances_to_min(self, fixture_records):
        out = resample(fixture_records, "A", "under", seed=2)
        assert class_counts(out, "A").counts == {"NOT": 80, "OFF": 80}

    def test_over_is_multiset_superset(self, fixture_records):
        out = resample(fixture_records, "A", "over", seed=7)
        before = Counter(r.id for r in fixture_records)
        after = Counter(r.id for r in out)
        assert all(after[k] >= v for k, v in before.items())

    def test_under_is_multiset_subset(self, fixture_records):
        out = resample(fixture_records, "A", "under", seed=7)
        before = Counter(r.id for r in fixture_records)
        after = Counter(r.id for r in out)
        assert all(before[k] >= v for k, v in after.items())

    def test_balanced_input_is_fixed_point(self):
        records = [make_record(i, "NOT") for i in range(5)]
        records += [make_record(10 + i, "OFF", "UNT") for i in range(5)]
        for mode in ("over", "under"):
            out = resample(records, "A", mode, seed=1)
            assert Counter(r.id for r in out) == Counter(r.id for r in records)

    def test_multiclass_level_c(self, fixture_records):
        tin = project(fixture_records, "C")
        out = resample(tin, "C", "over", seed=3)
        assert class_counts(out, "C").counts == {"IND": 25, "GRP": 25, "OTH": 25}

    def test_single_class_errors(self):
        records = [make_record(i, "NOT") for i in range(4)]
        with pytest.raises(SingleClassError):
            resample(records, "A", "over", seed=0)

    def test_deterministic(self, fixture_records):
        a = resample(fixture_records, "A", "over", seed=42)
        b = resample(fixture_records, "A", "over", seed=42)
        assert [r.id for r in a] == [r.id for r in b]


@st.composite
def label_lists(draw):
    n_classes = draw(st.integers(2, 3))
    labels = ["IND", "GRP", "OTH"][:n_classes]
    counts = [draw(st.integers(1, 12)) for _ in labels]
    records = []
    i = 0
    for label, count in zip(labels, counts):
        for _ in range(count):
            records.append(make_record(i, "OFF", "TIN", label))
            i += 1
    return records


@settings(max_examples=60, deadline=None)
@given(records=label_lists(), seed=st.integers(0, 2**32 - 1))
def test_resample_laws_hold_on_random_distributions(records, seed):
    counts = class_counts(records, "C").counts
    present = {k: v for k, v in counts.items() if v > 0}
    over = class_counts(resample(records, "C", "over", seed), "C").counts
    under = class_counts(resample(records, "C", "under", seed), "C").counts
    for label, value in present.items():
        assert over[label] == max(present.values())
        assert under[label] == min(present.values())


def test_hierarchy_invariant_unrepresentable():
    with pytest.raises(HierarchyViolationError):
        TweetRecord("1", "text", LabelA.NOT, LabelB.TIN, None)
