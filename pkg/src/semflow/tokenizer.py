"""Deterministic reference tokenizer.

Stands in for a model tokenizer: text splits into pieces at word /
whitespace / punctuation boundaries, each distinct piece gets a stable
32-bit id (FNV-1a of its bytes, first-sight collision chaining), and the
piece vocabulary persists on the instance so detokenize is byte-exact.
Piece concatenation reproduces the input, so round-trips are identity in
both directions. One instance is shared per serving manager; equal strings
always map to equal id sequences within it.
"""

from __future__ import annotations

import re
import struct
from typing import Iterable, List, Sequence, Tuple

_PIECE_RE = re.compile(r"[A-Za-z0-9_]+|\s+|.", re.DOTALL)

_FNV32_BASIS = 0x811C9DC5
_FNV32_PRIME = 0x01000193
_FNV64_BASIS = 0xCBF29CE484222325
_FNV64_PRIME = 0x00000100000001B3
_MASK32 = 0xFFFFFFFF
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a32(data: bytes, seed: int = _FNV32_BASIS) -> int:
    h = seed
    for b in data:
        h ^= b
        h = (h * _FNV32_PRIME) & _MASK32
    return h


def fnv1a64(data: bytes, seed: int = _FNV64_BASIS) -> int:
    h = seed
    for b in data:
        h ^= b
        h = (h * _FNV64_PRIME) & _MASK64
    return h


FNV64_EMPTY = _FNV64_BASIS


def hash_token_ids(token_ids: Iterable[int], seed: int = _FNV64_BASIS) -> int:
    """Chained 64-bit hash over token ids in little-endian byte order."""
    return fnv1a64(b"".join(struct.pack("<I", t) for t in token_ids), seed)


def split_pieces(text: str) -> List[str]:
    return _PIECE_RE.findall(text)


class ReferenceTokenizer:
    """Piece-wise tokenizer with a persistent first-sight vocabulary."""

    def __init__(self) -> None:
        self._id_of: dict[str, int] = {}
        self._piece_of: dict[int, str] = {}

    def _assign(self, piece: str) -> int:
        tid = self._id_of.get(piece)
        if tid is not None:
            return tid
        raw = piece.encode("utf-8")
        tid = fnv1a32(raw)
        # collision chaining: deterministic rehash until a free slot
        while tid in self._piece_of and self._piece_of[tid] != piece:
            tid = fnv1a32(struct.pack("<I", tid) + raw)
        self._id_of[piece] = tid
        self._piece_of[tid] = piece
        return tid

    def tokenize(self, text: str) -> List[int]:
        return [self._assign(p) for p in split_pieces(text)]

    def detokenize(self, token_ids: Sequence[int]) -> str:
        try:
            return "".join(self._piece_of[t] for t in token_ids)
        except KeyError as exc:
            raise ValueError(f"unknown token id {exc.args[0]}") from None

    def count(self, text: str) -> int:
        return len(split_pieces(text))

    def piece_spans(self, text: str) -> List[Tuple[int, int]]:
        """(start, end) character offsets of each piece, in order."""
        spans = []
        pos = 0
        for p in split_pieces(text):
            spans.append((pos, pos + len(p)))
            pos += len(p)
        return spans

    def vocab_size(self) -> int:
        return len(self._id_of)
