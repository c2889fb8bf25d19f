import numpy as np
import pytest

from s2t_longformer.errors import DataError
from s2t_longformer.text import BOS, EOS, N_RESERVED, PAD, UNK, Vocabulary, build_vocab


def test_reserved_ids():
    assert (PAD, BOS, EOS, UNK) == (0, 1, 2, 3)


def test_build_from_two_texts():
    vocab = build_vocab(["ab", "ba"])
    assert set(vocab.symbols) == {"a", "b"}
    assert vocab.size == 2 + N_RESERVED


def test_frequency_then_codepoint_ordering():
    vocab = build_vocab(["bbba", "c"])
    assert vocab.symbols == ["b", "a", "c"]  # b:3, then a/c tie broken by codepoint


def test_empty_corpus_rejected():
    with pytest.raises(DataError):
        build_vocab([])


def test_encode_brackets_with_bos_eos():
    vocab = build_vocab(["ab"])
    ids = vocab.encode("ab")
    assert ids[0] == BOS and ids[-1] == EOS
    assert len(ids) == 4


def test_unknown_char_maps_to_unk():
    vocab = build_vocab(["ab"])
    assert UNK in vocab.encode("axb").tolist()


def test_round_trip_identity():
    vocab = build_vocab(["hello world"])
    for text in ("hello", "world", "eh low", ""):
        assert vocab.decode(vocab.encode(text)) == text


def test_empty_string_is_bos_eos():
    vocab = build_vocab(["ab"])
    assert vocab.encode("").tolist() == [BOS, EOS]
    assert vocab.decode([BOS, EOS]) == ""


def test_decode_strips_reserved():
    vocab = build_vocab(["ab"])
    ids = [PAD, BOS, vocab.encode("a")[1], EOS, PAD]
    assert vocab.decode(ids) == "a"


def test_encode_is_prefix_monotone():
    vocab = build_vocab(["abcdef"])
    for text in ("a", "ab", "abc", "abcde"):
        longer = vocab.encode(text + "f")
        shorter = vocab.encode(text)
        assert shorter[:-1].tolist() == longer[: len(shorter) - 1].tolist()


def test_vocab_file_round_trip_and_line_mapping(tmp_path):
    vocab = build_vocab(["the quick brown fox"])
    path = tmp_path / "vocab.txt"
    vocab.save(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    # line i (0-based) holds the symbol with id i + 4
    for i, line in enumerate(lines):
        assert vocab.encode(line)[1] == i + N_RESERVED
    back = Vocabulary.load(path)
    assert back.symbols == vocab.symbols


def test_vocab_file_byte_stable(tmp_path):
    a, b = tmp_path / "a.txt", tmp_path / "b.txt"
    build_vocab(["same corpus here"]).save(a)
    build_vocab(["same corpus here"]).save(b)
    assert a.read_bytes() == b.read_bytes()


def test_duplicate_symbols_rejected():
    with pytest.raises(DataError):
        Vocabulary(["a", "a"])
