"""Tests for caption normalization, vocabulary, and padded encoding."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uucap.text import (
    END,
    PAD_INDEX,
    START,
    UNK,
    TokenSequence,
    build_vocabulary,
    decode_tokens,
    encode_caption,
    load_vocabulary,
    normalize_caption,
    read_manifest,
    save_vocabulary,
    tag_caption,
    write_manifest,
)


# --- normalize_caption -------------------------------------------------------

def test_normalize_empty():
    assert normalize_caption("") == ""


def test_normalize_basic_sentence():
    assert normalize_caption("The Knee is straight.") == "the knee is straight"


def test_normalize_single_letters_including_accented():
    assert normalize_caption("l s a à coupe") == "coupe"


def test_normalize_punctuation_and_spaces():
    assert normalize_caption("  Femur,  bone!  ") == "femur bone"
    assert normalize_caption("left/right") == "left right"
    assert normalize_caption("l'image") == "image"


def test_normalize_keeps_digits():
    # only one-LETTER tokens are dropped; single digits stay
    assert normalize_caption("section 4 of 12") == "section 4 of 12"


def test_normalize_unicode_punctuation():
    assert normalize_caption("cœur — visible…") == "cœur visible"


@settings(max_examples=200)
@given(st.text(max_size=80))
def test_normalize_idempotent(s):
    once = normalize_caption(s)
    assert normalize_caption(once) == once


@settings(max_examples=200)
@given(st.text(max_size=80))
def test_normalize_output_shape(s):
    out = normalize_caption(s)
    assert out == out.strip()
    assert "  " not in out
    assert out == out.lower()
    for tok in out.split():
        assert not (len(tok) == 1 and tok.isalpha())


# --- tag_caption -------------------------------------------------------------

def test_tag_plain():
    assert tag_caption("femur bone") == "<START> femur bone <END>"


def test_tag_empty():
    assert tag_caption("") == "<START> <END>"


# --- build_vocabulary --------------------------------------------------------

def test_vocabulary_hand_counted_example():
    vocab = build_vocabulary(["<START> a b <END>", "<START> b c <END>"])
    # freq 2: <END>, <START>, b (lexicographic among ties); freq 1: a, c; then <UNK>
    assert vocab.word_to_index == {
        END: 1,
        START: 2,
        "b": 3,
        "a": 4,
        "c": 5,
        UNK: 6,
    }
    assert vocab.size == 6
    assert vocab.max_caption_length == 4


def test_vocabulary_single_caption():
    vocab = build_vocabulary(["<START> x <END>"])
    assert vocab.size == 4
    assert vocab.max_caption_length == 3
    assert vocab.word_to_index[UNK] == 4


def test_vocabulary_empty_corpus_rejected():
    with pytest.raises(ValueError):
        build_vocabulary([])


def test_vocabulary_untagged_rejected():
    with pytest.raises(ValueError):
        build_vocabulary(["plain caption without markers"])


def test_vocabulary_inverse_maps():
    vocab = build_vocabulary(["<START> femur bone visible <END>"])
    for word, idx in vocab.word_to_index.items():
        assert vocab.index_to_word[idx] == word
    assert PAD_INDEX not in vocab.index_to_word


@settings(max_examples=50)
@given(st.permutations(["<START> a b <END>", "<START> b c <END>", "<START> c d e <END>"]))
def test_vocabulary_order_invariant(corpus):
    baseline = build_vocabulary(["<START> a b <END>", "<START> b c <END>", "<START> c d e <END>"])
    assert build_vocabulary(list(corpus)).word_to_index == baseline.word_to_index


# --- encode / decode ---------------------------------------------------------

def _small_vocab():
    return build_vocabulary(["<START> femur bone <END>", "<START> femur visible <END>"])


def test_encode_pads_with_zeros():
    vocab = _small_vocab()
    seq = encode_caption(vocab, "<START> femur <END>", max_len=5)
    expected = [vocab.start_index, vocab.word_to_index["femur"], vocab.end_index, 0, 0]
    assert seq.indices.tolist() == expected
    assert seq.true_length == 3


def test_encode_minimal_caption():
    vocab = _small_vocab()
    seq = encode_caption(vocab, "<START> <END>", max_len=4)
    assert seq.indices.tolist() == [vocab.start_index, vocab.end_index, 0, 0]


def test_encode_unknown_word():
    vocab = _small_vocab()
    seq = encode_caption(vocab, "<START> tibia <END>", max_len=4)
    assert seq.indices[1] == vocab.unk_index


def test_encode_truncates_and_forces_end():
    vocab = _small_vocab()
    seq = encode_caption(vocab, "<START> femur bone visible femur <END>", max_len=4)
    assert len(seq.indices) == 4
    assert seq.indices[0] == vocab.start_index
    assert seq.indices[-1] == vocab.end_index
    assert seq.true_length == 4


def test_encode_max_len_too_small():
    with pytest.raises(ValueError):
        encode_caption(_small_vocab(), "<START> <END>", max_len=1)


def test_decode_round_trip():
    vocab = _small_vocab()
    seq = encode_caption(vocab, "<START> femur bone <END>", max_len=6)
    assert decode_tokens(vocab, seq) == "femur bone"


def test_decode_all_padding():
    vocab = _small_vocab()
    seq = TokenSequence(np.zeros(5, dtype=np.int32), 0)
    assert decode_tokens(vocab, seq) == ""


def test_decode_unknown_token_renders_literally():
    vocab = _small_vocab()
    seq = encode_caption(vocab, "<START> tibia <END>", max_len=4)
    assert decode_tokens(vocab, seq) == UNK


def test_decode_rejects_out_of_vocab_index():
    vocab = _small_vocab()
    seq = TokenSequence(np.asarray([vocab.start_index, 999, vocab.end_index], dtype=np.int32), 3)
    with pytest.raises(ValueError):
        decode_tokens(vocab, seq)


@settings(max_examples=100)
@given(st.lists(st.sampled_from(["femur", "bone", "visible", "knee"]), min_size=0, max_size=6))
def test_encode_decode_round_trip_property(words):
    corpus_words = "femur bone visible knee"
    vocab = build_vocabulary([tag_caption(corpus_words)])
    n = " ".join(words)
    seq = encode_caption(vocab, tag_caption(n), max_len=10)
    assert decode_tokens(vocab, seq) == n
    # zeros appear only as a suffix
    ids = seq.indices.tolist()
    if 0 in ids:
        first_zero = ids.index(0)
        assert all(v == 0 for v in ids[first_zero:])
        assert first_zero == seq.true_length


# --- vocabulary JSON round-trip ----------------------------------------------

def test_vocabulary_json_round_trip(tmp_path):
    vocab = build_vocabulary(["<START> femur bone <END>", "<START> bone <END>"])
    path = tmp_path / "vocab.json"
    save_vocabulary(vocab, path)
    loaded = load_vocabulary(path)
    assert loaded.word_to_index == vocab.word_to_index
    assert loaded.max_caption_length == vocab.max_caption_length
    doc = json.loads(path.read_text())
    assert list(doc) == ["max_caption_length", "words"]


def test_load_vocabulary_missing_reserved(tmp_path):
    path = tmp_path / "vocab.json"
    path.write_text(json.dumps({"max_caption_length": 3, "words": ["a", "b"]}))
    with pytest.raises(ValueError):
        load_vocabulary(path)


# --- manifest ----------------------------------------------------------------

def test_manifest_round_trip(tmp_path):
    rows = [("img_000.png", "femur bone, visible"), ("img_001.png", "the knee")]
    path = tmp_path / "captions.csv"
    write_manifest(rows, path)
    assert read_manifest(path) == rows


def test_manifest_rejects_wrong_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("image,text\na.png,hello\n")
    with pytest.raises(ValueError):
        read_manifest(path)


def test_manifest_rejects_empty(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("")
    with pytest.raises(ValueError):
        read_manifest(path)
