"""Prefix hash chains and the cluster-wide prefix index.

A request's chain has one entry per placeholder position: the chained
64-bit hash of every token strictly before that position, over constant
text and resolved input values. Chains extend past an input only once its
value is Ready. Equal chain entries imply equal token prefixes (hash
collisions aside), which is what both scheduling affinity and context
reuse key on.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Set, Tuple

from .dag import Request
from .prompting import ConstantText, Direction, Placeholder
from .tokenizer import FNV64_EMPTY, ReferenceTokenizer, hash_token_ids


@dataclass(frozen=True)
class ChainEntry:
    byte_offset: int
    hash64: int


@dataclass
class PrefixHashChain:
    entries: List[ChainEntry] = field(default_factory=list)

    def hashes(self) -> List[int]:
        return [e.hash64 for e in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


@dataclass
class RenderedPrefix:
    """Fill-side view of a request prompt: per-boundary segments.

    segments[i] is the token run between placeholder i-1 and placeholder i
    (resolved input value plus trailing constant text); chain.entries[i]
    hashes everything before placeholder i. Rendering stops at the output
    placeholder; text after it never reaches an engine.
    """

    chain: PrefixHashChain
    segment_texts: List[str]
    segment_tokens: List[List[int]]
    complete: bool  # all inputs before the output placeholder were resolved

    def total_tokens(self) -> int:
        return sum(len(t) for t in self.segment_tokens)

    def full_text(self) -> str:
        return "".join(self.segment_texts)


def render_prefix(
    request: Request,
    values: Dict[str, str],
    tokenizer: ReferenceTokenizer,
) -> RenderedPrefix:
    """Build the fill segments and hash chain for a request.

    `values` maps variable ids to Ready values; rendering stops at the
    first unresolved input (partial chain) or at the output placeholder.
    """
    chain = PrefixHashChain()
    seg_texts: List[str] = []
    seg_tokens: List[List[int]] = []
    pending = ""
    byte_offset = 0
    seed = FNV64_EMPTY
    complete = True

    def close_segment(text: str) -> None:
        nonlocal pending, byte_offset, seed
        tokens = tokenizer.tokenize(text)
        byte_offset += len(text.encode("utf-8"))
        seed = hash_token_ids(tokens, seed)
        seg_texts.append(text)
        seg_tokens.append(tokens)
        chain.entries.append(ChainEntry(byte_offset, seed))

    for seg in request.template.segments:
        if isinstance(seg, ConstantText):
            pending += seg.text
            continue
        assert isinstance(seg, Placeholder)
        if seg.direction is Direction.OUTPUT:
            close_segment(pending)
            pending = ""
            break
        var_id = request.bindings[seg.name]
        if var_id not in values:
            complete = False
            close_segment(pending)
            pending = ""
            break
        close_segment(pending)
        pending = values[var_id]
    else:
        # no output placeholder: trailing constants still fill
        if pending or not chain.entries:
            tokens = tokenizer.tokenize(pending)
            seg_texts.append(pending)
            seg_tokens.append(tokens)
            seed = hash_token_ids(tokens, seed)
            byte_offset += len(pending.encode("utf-8"))
            chain.entries.append(ChainEntry(byte_offset, seed))
    return RenderedPrefix(chain, seg_texts, seg_tokens, complete)


# ---------------------------------------------------------------------------
# cluster-wide index

QueuedOwner = Tuple[str, str]          # ("req", request_id)
ContextOwner = Tuple[str, str, str]    # ("ctx", engine_id, context_id)
Owner = Tuple


def req_owner(request_id: str) -> QueuedOwner:
    return ("req", request_id)


def ctx_owner(engine_id: str, context_id: str) -> ContextOwner:
    return ("ctx", engine_id, context_id)


@dataclass
class PrefixMatch:
    depth: int                      # matched chain entries (token-prefix depth)
    queued: List[str]               # request ids
    contexts: List[Tuple[str, str]]  # (engine_id, context_id)

    def __bool__(self) -> bool:
        return self.depth > 0


class PrefixIndex:
    """hash64 -> owners holding that token prefix (queued requests and contexts)."""

    def __init__(self) -> None:
        self._by_hash: Dict[int, Set[Owner]] = {}
        self._chains: Dict[Owner, List[int]] = {}

    def insert(self, owner: Owner, hashes: Sequence[int]) -> None:
        self.remove(owner)
        self._chains[owner] = list(hashes)
        for h in hashes:
            self._by_hash.setdefault(h, set()).add(owner)

    def remove(self, owner: Owner) -> None:
        old = self._chains.pop(owner, None)
        if not old:
            return
        for h in old:
            bucket = self._by_hash.get(h)
            if bucket is not None:
                bucket.discard(owner)
                if not bucket:
                    del self._by_hash[h]

    def owner_chain(self, owner: Owner) -> Optional[List[int]]:
        return self._chains.get(owner)

    def lookup(self, hashes: Sequence[int], exclude: Optional[Set[Owner]] = None) -> PrefixMatch:
        """Owners sharing the longest common chain prefix of length >= 1."""
        skip = exclude or set()
        for i in range(len(hashes) - 1, -1, -1):
            bucket = self._by_hash.get(hashes[i])
            if not bucket:
                continue
            owners = sorted(o for o in bucket if o not in skip)
            if not owners:
                continue
            queued = [o[1] for o in owners if o[0] == "req"]
            contexts = [(o[1], o[2]) for o in owners if o[0] == "ctx"]
            return PrefixMatch(i + 1, queued, contexts)
        return PrefixMatch(0, [], [])

    def live_owners(self) -> List[Owner]:
        return sorted(self._chains)
