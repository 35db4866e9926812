import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from offlang.tokenizer import (
    CLS_ID,
    MASK_ID,
    PAD_ID,
    UNK_ID,
    Vocabulary,
    build_vocab,
    decode,
    encode,
    load_vocab,
    save_vocab,
    serialize_vocab,
    vocab_hash,
)


class TestBuildVocab:
    def test_ranking_and_ids(self):
        vocab = build_vocab(["a b", "a c"], min_freq=1, max_size=10)
        assert vocab.id_of("a") == 4
        assert vocab.id_of("b") == 5
        assert vocab.id_of("c") == 6
        assert vocab.size == 7

    def test_min_freq_filters(self):
        vocab = build_vocab(["a b", "a c"], min_freq=2, max_size=10)
        assert vocab.id_of("a") == 4
        assert vocab.id_of("b") == UNK_ID
        assert vocab.size == 5

    def test_max_size_truncates(self):
        vocab = build_vocab(["a b", "a c"], min_freq=1, max_size=5)
        assert vocab.size == 5
        assert vocab.id_of("a") == 4
        assert vocab.id_of("b") == UNK_ID

    def test_empty_corpus_rejected(self):
        with pytest.raises(ValueError):
            build_vocab([], min_freq=1, max_size=10)

    def test_deterministic(self):
        a = build_vocab(["x y z", "y z", "z"], max_size=100)
        b = build_vocab(["x y z", "y z", "z"], max_size=100)
        assert a.tokens == b.tokens

    def test_mask_layout(self):
        vocab = build_vocab(["a b"], max_size=10, include_mask=True)
        assert vocab.mask_id == MASK_ID == 4
        assert vocab.id_of("a") == 5
        assert vocab.first_content_id == 5


class TestEncode:
    def test_basic(self):
        vocab = build_vocab(["a b", "a c"], max_size=10)
        seq = encode("a b", vocab, max_len=6)
        assert seq.ids.tolist() == [CLS_ID, 4, 5, PAD_ID, PAD_ID, PAD_ID]
        assert seq.mask.tolist() == [1, 1, 1, 0, 0, 0]
        assert seq.true_len == 3

    def test_truncation_keeps_prefix(self):
        words = [f"t{i}" for i in range(200)]
        vocab = build_vocab([" ".join(words)], max_size=300)
        seq = encode(" ".join(words), vocab, max_len=150)
        assert seq.true_len == 150
        assert int(seq.mask.sum()) == 150
        # last kept slot holds the 149th input word (1-based)
        assert seq.ids[149] == vocab.id_of(words[148])

    def test_oov_becomes_unk(self):
        vocab = build_vocab(["a b"], max_size=10)
        seq = encode("zzz", vocab, max_len=4)
        assert seq.ids.tolist()[:2] == [CLS_ID, UNK_ID]

    def test_mask_true_len_law(self):
        vocab = build_vocab(["a b c d e"], max_size=20)
        for text in ("", "a", "a b c", "a b c d e"):
            seq = encode(text, vocab, max_len=150)
            assert int(seq.mask.sum()) == seq.true_len == min(len(text.split()) + 1, 150)


class TestDecode:
    def test_drops_specials(self):
        vocab = build_vocab(["a b"], max_size=10)
        assert decode([CLS_ID, 4, 5, PAD_ID], vocab) == "a b"

    def test_all_pad_empty(self):
        vocab = build_vocab(["a b"], max_size=10)
        assert decode([PAD_ID, PAD_ID], vocab) == ""

    def test_out_of_range_id(self):
        vocab = build_vocab(["a b"], max_size=10)
        with pytest.raises(ValueError):
            decode([99], vocab)

    def test_round_trip(self):
        vocab = build_vocab(["the quick brown fox jumps"], max_size=100)
        text = "quick fox jumps the"
        assert decode(encode(text, vocab, max_len=150).ids, vocab) == text


@settings(max_examples=100, deadline=None)
@given(st.lists(st.sampled_from("red green blue cyan teal".split()), min_size=0, max_size=20))
def test_round_trip_property(words):
    vocab = build_vocab(["red green blue cyan teal"], max_size=100)
    text = " ".join(words)
    assert decode(encode(text, vocab, max_len=150).ids, vocab) == text


class TestVocabFile:
    def test_round_trip(self, tmp_path):
        vocab = build_vocab(["a b c", "b c", "c"], max_size=50, include_mask=True)
        path = tmp_path / "vocab.tsv"
        save_vocab(vocab, path)
        loaded = load_vocab(path)
        assert loaded.tokens == vocab.tokens
        assert loaded.has_mask == vocab.has_mask
        assert vocab_hash(loaded) == vocab_hash(vocab)

    def test_serialization_format(self):
        vocab = build_vocab(["a"], max_size=10)
        lines = serialize_vocab(vocab).splitlines()
        assert lines[0] == "[PAD]\t0"
        assert lines[4] == "a\t4"

    def test_non_contiguous_ids_rejected(self, tmp_path):
        path = tmp_path / "vocab.tsv"
        path.write_text("[PAD]\t0\n[UNK]\t1\n[CLS]\t2\n[SEP]\t3\na\t7\n", encoding="utf-8")
        with pytest.raises(ValueError):
            load_vocab(path)

    def test_specials_must_lead(self):
        with pytest.raises(ValueError):
            Vocabulary(("a", "[PAD]", "[UNK]", "[CLS]", "[SEP]"), False)
