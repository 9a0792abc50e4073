"""Lossless tokenizer and FNV hash checks against independent oracles."""

import random

import pytest

from semflow.tokenizer import (
    FNV64_EMPTY,
    ReferenceTokenizer,
    fnv1a32,
    fnv1a64,
    hash_token_ids,
    split_pieces,
)

import oracles


# standard FNV-1a test vectors, not derived from the implementation
KNOWN_32 = [(b"", 0x811C9DC5), (b"a", 0xE40C292C), (b"foobar", 0xBF9CF968)]
KNOWN_64 = [
    (b"", 0xCBF29CE484222325),
    (b"a", 0xAF63DC4C8601EC8C),
    (b"foobar", 0x85944171F73967E8),
]


@pytest.mark.parametrize("data,want", KNOWN_32)
def test_fnv1a32_known_vectors(data, want):
    assert fnv1a32(data) == want


@pytest.mark.parametrize("data,want", KNOWN_64)
def test_fnv1a64_known_vectors(data, want):
    assert fnv1a64(data) == want


def test_hash_token_ids_matches_byte_oracle():
    rng = random.Random(99)
    assert hash_token_ids([]) == FNV64_EMPTY == 0xCBF29CE484222325
    for _ in range(200):
        ids = [rng.randrange(1 << 32) for _ in range(rng.randint(0, 12))]
        assert hash_token_ids(ids) == oracles.fnv64_ids(ids)


def test_hash_token_ids_chains():
    rng = random.Random(100)
    for _ in range(200):
        a = [rng.randrange(1 << 32) for _ in range(rng.randint(0, 8))]
        b = [rng.randrange(1 << 32) for _ in range(rng.randint(0, 8))]
        assert hash_token_ids(a + b) == hash_token_ids(b, seed=hash_token_ids(a))


def test_split_pieces_examples():
    assert split_pieces("") == []
    assert split_pieces("a b") == ["a", " ", "b"]
    assert split_pieces("hello, world") == ["hello", ",", " ", "world"]
    assert split_pieces("a\n\n  b") == ["a", "\n\n  ", "b"]
    assert split_pieces("x_1 = 7") == ["x_1", " ", "=", " ", "7"]
    # non-word unicode falls through to single characters
    assert split_pieces("你好ok") == ["你", "好", "ok"]


def test_split_pieces_shape_property():
    rng = random.Random(4)
    alphabet = "ab z_9.,(\n\t){}é你\U0001f40d"
    for _ in range(300):
        text = "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 40)))
        pieces = split_pieces(text)
        assert "".join(pieces) == text
        for p in pieces:
            word = all(c.isascii() and (c.isalnum() or c == "_") for c in p)
            space = p.isspace()
            assert word or space or len(p) == 1


def test_repeated_word_keeps_separate_tokens():
    # "a a a" is five pieces; equal pieces share an id but stay lossless
    tok = ReferenceTokenizer()
    ids = tok.tokenize("a a a")
    assert len(ids) == 5
    assert ids[0] == ids[2] == ids[4]
    assert ids[1] == ids[3]
    assert ids[0] != ids[1]
    assert tok.detokenize(ids) == "a a a"


def test_round_trip_random_unicode():
    tok = ReferenceTokenizer()
    rng = random.Random(7)
    alphabet = "abc XYZ_01,;:!\n\r\téß你好\U0001f40d\"'\\"
    for _ in range(400):
        text = "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 60)))
        ids = tok.tokenize(text)
        assert tok.detokenize(ids) == text
        assert tok.count(text) == len(ids)


def test_ids_deterministic_across_instances():
    a = ReferenceTokenizer()
    b = ReferenceTokenizer()
    texts = ["write code", "code write", "你好 world", "  mixed\tws\n"]
    # interleave differently on purpose; ids must not depend on arrival order
    for t in texts:
        a.tokenize(t)
    for t in reversed(texts):
        b.tokenize(t)
    for t in texts:
        assert a.tokenize(t) == b.tokenize(t)


def test_word_id_is_fnv32_of_utf8():
    def oracle32(data: bytes) -> int:
        h = 0x811C9DC5
        for byte in data:
            h = ((h ^ byte) * 0x01000193) % (1 << 32)
        return h

    tok = ReferenceTokenizer()
    for piece in ["hello", " ", "你", "_x9"]:
        assert tok.tokenize(piece) == [oracle32(piece.encode("utf-8"))]


def test_distinct_pieces_get_distinct_ids():
    tok = ReferenceTokenizer()
    rng = random.Random(21)
    pieces = {f"w{rng.randrange(10 ** 9)}_{i}" for i in range(2000)}
    ids = {tok.tokenize(p)[0] for p in pieces}
    assert len(ids) == len(pieces)
    assert tok.vocab_size() >= len(pieces)


def test_detokenize_unknown_id():
    tok = ReferenceTokenizer()
    assert tok.detokenize([]) == ""
    with pytest.raises(ValueError):
        tok.detokenize([123456789])


def test_piece_spans_cover_text():
    tok = ReferenceTokenizer()
    rng = random.Random(30)
    for _ in range(100):
        text = "".join(rng.choice("ab c_7.\n") for _ in range(rng.randint(0, 30)))
        spans = tok.piece_spans(text)
        assert len(spans) == tok.count(text)
        pos = 0
        for start, end in spans:
            assert start == pos and end > start
            pos = end
        assert pos == len(text)
        # prefix truncation at any span boundary stays lossless
        if spans:
            k = rng.randrange(len(spans))
            prefix = text[: spans[k][1]]
            assert tok.detokenize(tok.tokenize(text)[: k + 1]) == prefix
