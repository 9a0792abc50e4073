"""Simulated LLM engine behind the universal Fill/Generate/FreeContext surface.

Contexts form a refcounted forest over paged KV blocks: a child shares every
ancestor block and owns only its own tokens, ceil-packed into fresh blocks.
The engine advances in discrete steps: at most one fill chunk plus one decode
iteration per step, each running generation emitting exactly one token.
Iteration latency is T(B) = c0 + c1*B over the effective resident tokens B;
with the shared kernel flag, tokens of a context shared by several running
requests count once. All time is integer nanoseconds on a virtual clock.
"""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass, field
from typing import Deque, Dict, List, Optional, Sequence, Set, Tuple

from .errors import ContextBusy, OutOfMemory, UnknownContext, UnknownParentContext
from .tokenizer import hash_token_ids

MS = 1_000_000  # ns per millisecond


@dataclass
class CostModel:
    """Linear iteration/fill cost model; constants in ms, applied in int ns."""

    c0_ms: float = 2.0       # fixed per-iteration overhead
    c1_ms: float = 0.0062    # per-resident-token decode cost
    c2_ms: float = 5.0       # fixed per-fill overhead
    c3_ms: float = 0.002     # per-prompt-token fill cost
    shared_kernel: bool = True
    block_size: int = 16

    def __post_init__(self) -> None:
        self.c0_ns = round(self.c0_ms * MS)
        self.c1_ns = round(self.c1_ms * MS)
        self.c2_ns = round(self.c2_ms * MS)
        self.c3_ns = round(self.c3_ms * MS)

    def iteration_ns(self, batch_tokens: int) -> int:
        return self.c0_ns + self.c1_ns * batch_tokens

    def fill_ns(self, fill_tokens: int) -> int:
        return self.c2_ns + self.c3_ns * fill_tokens

    def latency_threshold_ms(self, capacity: int) -> float:
        """ms per output token implied by running at `capacity` resident tokens."""
        return self.iteration_ns(capacity) / MS


@dataclass
class Context:
    context_id: str
    engine_id: str
    parent_id: Optional[str]
    token_count: int = 0
    block_ids: List[int] = field(default_factory=list)
    refcount: int = 0
    dropped: bool = False
    chain_hashes: List[int] = field(default_factory=list)
    registered_hashes: List[int] = field(default_factory=list)


class PagedKvStore:
    """Block accounting; every allocated block belongs to exactly one context."""

    def __init__(self, block_size: int, total_blocks: int):
        self.block_size = block_size
        self.total_blocks = total_blocks
        self.owner: Dict[int, str] = {}
        self.peak_used = 0
        self._next_block = itertools.count()

    @property
    def used_blocks(self) -> int:
        return len(self.owner)

    @property
    def free_blocks(self) -> int:
        return self.total_blocks - self.used_blocks

    def blocks_for(self, tokens: int) -> int:
        return -(-tokens // self.block_size)

    def grow(self, ctx: Context, new_token_count: int) -> None:
        """Extend ctx to new_token_count tokens; atomic, raises OutOfMemory."""
        need = self.blocks_for(new_token_count) - len(ctx.block_ids)
        if need > self.free_blocks:
            raise OutOfMemory(
                f"engine {ctx.engine_id}: need {need} blocks, {self.free_blocks} free"
            )
        for _ in range(need):
            bid = next(self._next_block)
            self.owner[bid] = ctx.context_id
            ctx.block_ids.append(bid)
        ctx.token_count = new_token_count
        if self.used_blocks > self.peak_used:
            self.peak_used = self.used_blocks

    def release(self, ctx: Context) -> None:
        for bid in ctx.block_ids:
            del self.owner[bid]
        ctx.block_ids = []
        ctx.token_count = 0


@dataclass
class FillTask:
    request_id: Optional[str]
    context_id: str
    token_ids: List[int]


@dataclass
class GenerationTask:
    request_id: str
    context_id: str
    token_ids: List[int]   # effective output tokens (stop/max_tokens applied)
    value_text: str
    emitted: int = 0
    started: bool = False
    done: bool = False

    @property
    def remaining(self) -> int:
        return len(self.token_ids) - self.emitted


@dataclass
class StepReport:
    engine_id: str
    started_ns: int
    elapsed_ns: int
    fill_tokens: int
    batch_tokens: int
    emitted: Dict[str, int]
    finished: List[str]
    failed: List[Tuple[str, str]]  # (request_id, reason)
    fill_completed: List[str]


@dataclass
class ContextPlan:
    """Outcome of matching a rendered prefix against live contexts."""

    reuse_context_id: Optional[str]
    reused_tokens: int
    fill_segments: List[Tuple[List[int], int]]  # (tokens, boundary hash)
    marginal_tokens: int
    # reused tokens whose contexts no resident request is charged for; the
    # new request adopts them so admission reflects true decode residency
    adopted_tokens: int = 0


class Engine:
    """One simulated engine: context forest, fill queue, decode batch."""

    def __init__(
        self,
        engine_id: str,
        cost: CostModel,
        kv_tokens: int = 120_000,
        token_capacity: int = 64_000,
    ):
        self.engine_id = engine_id
        self.cost = cost
        self.token_capacity = token_capacity
        self.latency_threshold_ms = cost.latency_threshold_ms(token_capacity)
        self.store = PagedKvStore(cost.block_size, -(-kv_tokens // cost.block_size))
        self.clock_ns = 0
        self.contexts: Dict[str, Context] = {}
        self.registry: Dict[int, str] = {}  # boundary hash -> context holding it
        self.fill_queue: Deque[FillTask] = deque()
        self.gens: Dict[str, GenerationTask] = {}
        self.pending_fills: Dict[str, int] = {}
        self.charges: Dict[str, int] = {}
        self.holder_class: Dict[str, str] = {}  # request_id -> latency|throughput|group
        self.request_leaf: Dict[str, str] = {}  # resident request -> leaf context
        self.trace: List[str] = []
        self.reports: List[StepReport] = []
        self.reuse_enabled = True  # baselines plan every prompt as a fresh fill
        self.busy_ns = 0
        self.fill_ns_total = 0
        self.decode_ns_total = 0
        self.total_emitted = 0
        self._ctx_counter = itertools.count()

    # -- context primitives -------------------------------------------------

    def new_context_id(self) -> str:
        return f"{self.engine_id}.c{next(self._ctx_counter)}"

    def get_context(self, context_id: str) -> Context:
        ctx = self.contexts.get(context_id)
        if ctx is None:
            raise UnknownContext(f"unknown context {context_id}")
        return ctx

    def create_context(
        self,
        context_id: str,
        parent_context_id: Optional[str],
        request_id: Optional[str] = None,
    ) -> Context:
        parent_hashes: List[int] = []
        if parent_context_id is not None:
            parent = self.contexts.get(parent_context_id)
            if parent is None:
                raise UnknownParentContext(f"unknown parent {parent_context_id}")
            parent.refcount += 1
            parent_hashes = list(parent.chain_hashes)
        ctx = Context(
            context_id=context_id,
            engine_id=self.engine_id,
            parent_id=parent_context_id,
            chain_hashes=parent_hashes,
        )
        self.contexts[context_id] = ctx
        if request_id is not None:
            self.request_leaf[request_id] = context_id
        return ctx

    def fill(
        self,
        token_ids: Sequence[int],
        context_id: str,
        parent_context_id: Optional[str] = None,
        request_id: Optional[str] = None,
        boundary_hash: Optional[int] = None,
    ) -> int:
        """Allocate blocks for the new tokens and queue the fill work.

        The context is created on first use. Allocation is atomic: on
        OutOfMemory the store and context tree are unchanged.
        """
        created = context_id not in self.contexts
        ctx = self.create_context(context_id, parent_context_id) if created else self.get_context(context_id)
        try:
            self.store.grow(ctx, ctx.token_count + len(token_ids))
        except OutOfMemory:
            if created:
                self._discard_context(ctx)
            raise
        if boundary_hash is not None:
            ctx.chain_hashes.append(boundary_hash)
            if boundary_hash not in self.registry:
                self.registry[boundary_hash] = context_id
                ctx.registered_hashes.append(boundary_hash)
        self.fill_queue.append(FillTask(request_id, context_id, list(token_ids)))
        if request_id is not None:
            self.pending_fills[request_id] = self.pending_fills.get(request_id, 0) + 1
            self.request_leaf[request_id] = context_id
        return len(token_ids)

    def generate(
        self,
        request_id: str,
        context_id: str,
        token_ids: Sequence[int],
        value_text: str,
    ) -> GenerationTask:
        ctx = self.get_context(context_id)
        ctx.refcount += 1  # the active request holds its leaf
        self.request_leaf[request_id] = context_id
        task = GenerationTask(request_id, context_id, list(token_ids), value_text)
        if self.pending_fills.get(request_id, 0) == 0:
            task.started = True
        self.gens[request_id] = task
        return task

    def _discard_context(self, ctx: Context) -> None:
        self.store.release(ctx)
        for h in ctx.registered_hashes:
            if self.registry.get(h) == ctx.context_id:
                del self.registry[h]
        ctx.registered_hashes = []
        del self.contexts[ctx.context_id]
        if ctx.parent_id is not None:
            parent = self.contexts.get(ctx.parent_id)
            if parent is not None:
                parent.refcount -= 1
                if parent.refcount == 0 and parent.dropped:
                    self._discard_context(parent)

    def free_context(self, context_id: str) -> None:
        ctx = self.get_context(context_id)
        if ctx.refcount > 0:
            raise ContextBusy(
                f"context {context_id} has refcount {ctx.refcount}"
            )
        self._discard_context(ctx)

    def mark_dropped(self, context_id: str) -> None:
        """Free once unreferenced; parents cascade when children go."""
        ctx = self.get_context(context_id)
        ctx.dropped = True
        if ctx.refcount == 0:
            self._discard_context(ctx)

    # -- planning -------------------------------------------------------

    def plan_prefix(
        self,
        chain_hashes: Sequence[int],
        segment_tokens: Sequence[Sequence[int]],
        overlay: Optional[Dict[int, str]] = None,
    ) -> ContextPlan:
        """Match a rendered prefix against live contexts (plus an overlay of
        boundaries planned earlier in the same scheduling pass).

        Matched tokens are split by whether some resident request is still
        charged for them: a reused chain whose holders all finished is
        adopted by the new request, so the sum of charges keeps covering
        everything the decode batch touches.
        """
        reuse_id = None
        depth = 0
        credited_depth = 0
        if self.reuse_enabled:
            covered = 0
            cumulative = [0] * len(chain_hashes)
            for i in range(len(chain_hashes)):
                covered += len(segment_tokens[i]) if i < len(segment_tokens) else 0
                cumulative[i] = covered
            live: Optional[Set[str]] = None
            for i in range(len(chain_hashes) - 1, -1, -1):
                if cumulative[i] == 0:
                    break  # empty prefix: nothing to reuse
                h = chain_hashes[i]
                reg_cid = self.registry.get(h)
                in_overlay = overlay is not None and h in overlay
                if reg_cid is None and not in_overlay:
                    continue
                if reuse_id is None:
                    reuse_id = reg_cid if reg_cid is not None else overlay[h]
                    depth = i + 1
                if in_overlay:
                    credited_depth = i + 1
                    break
                if live is None:
                    live = self._live_context_ids()
                if reg_cid in live:
                    credited_depth = i + 1
                    break
        fill_segments: List[Tuple[List[int], int]] = []
        marginal = 0
        for i in range(depth, len(segment_tokens)):
            tokens = list(segment_tokens[i])
            if not tokens:
                continue
            fill_segments.append((tokens, chain_hashes[i]))
            marginal += len(tokens)
        reused = 0
        if reuse_id is not None:
            ctx = self.contexts.get(reuse_id)
            if ctx is not None:
                reused = self._chain_tokens(ctx)
        adopted = 0
        if depth > credited_depth:
            adopted = cumulative[depth - 1] - (cumulative[credited_depth - 1] if credited_depth else 0)
        return ContextPlan(reuse_id, reused, fill_segments, marginal, adopted)

    def _live_context_ids(self) -> Set[str]:
        """Contexts reachable from any resident request's leaf, ancestors
        included; their tokens are already covered by a live charge."""
        live: Set[str] = set()
        for leaf in self.request_leaf.values():
            cur = self.contexts.get(leaf)
            while cur is not None and cur.context_id not in live:
                live.add(cur.context_id)
                cur = self.contexts.get(cur.parent_id) if cur.parent_id else None
        return live

    def _chain_tokens(self, ctx: Context) -> int:
        total = 0
        cur: Optional[Context] = ctx
        while cur is not None:
            total += cur.token_count
            cur = self.contexts.get(cur.parent_id) if cur.parent_id else None
        return total

    # -- stepping ---------------------------------------------------------

    def has_work(self) -> bool:
        return bool(self.fill_queue) or any(not g.done for g in self.gens.values())

    def step(self) -> Optional[StepReport]:
        if not self.has_work():
            return None
        started_ns = self.clock_ns
        emitted: Dict[str, int] = {}
        finished: List[str] = []
        failed: List[Tuple[str, str]] = []
        fill_completed: List[str] = []

        # zero-length generations resolve at the boundary with no decode cost
        for g in list(self.gens.values()):
            if g.started and not g.done and not g.token_ids:
                g.done = True
                finished.append(g.request_id)

        fill_tokens = 0
        fill_req: Optional[str] = None
        if self.fill_queue:
            task = self.fill_queue.popleft()
            fill_tokens = len(task.token_ids)
            fill_req = task.request_id
            if task.request_id is not None:
                left = self.pending_fills.get(task.request_id, 0) - 1
                self.pending_fills[task.request_id] = left
                if left <= 0:
                    fill_completed.append(task.request_id)

        running = [g for g in self.gens.values() if g.started and not g.done]
        batch_tokens = self._batch_tokens(running)

        elapsed = 0
        if fill_tokens > 0:
            part = self.cost.fill_ns(fill_tokens)
            elapsed += part
            self.fill_ns_total += part
        if running:
            part = self.cost.iteration_ns(batch_tokens)
            elapsed += part
            self.decode_ns_total += part
        self.clock_ns += elapsed
        self.busy_ns += elapsed

        for g in running:
            ctx = self.contexts[g.context_id]
            try:
                self.store.grow(ctx, ctx.token_count + 1)
            except OutOfMemory as exc:
                g.done = True
                failed.append((g.request_id, str(exc)))
                continue
            g.emitted += 1
            emitted[g.request_id] = 1
            if g.remaining == 0:
                g.done = True
                finished.append(g.request_id)

        # fills that completed this step join the decode batch next step
        for rid in fill_completed:
            g = self.gens.get(rid)
            if g is not None:
                g.started = True

        self.total_emitted += len(emitted)
        self.trace.append(
            "t=%s engine=%s fill=%d batch=%d emitted=%d"
            % (format_ms(self.clock_ns), self.engine_id, fill_tokens, batch_tokens, len(emitted))
        )
        report = StepReport(
            self.engine_id,
            started_ns,
            elapsed,
            fill_tokens,
            batch_tokens,
            emitted,
            finished,
            failed,
            fill_completed,
        )
        self.reports.append(report)
        return report

    def _batch_tokens(self, running: List[GenerationTask]) -> int:
        if not running:
            return 0
        if self.cost.shared_kernel:
            seen: Set[str] = set()
            total = 0
            for g in running:
                cur: Optional[Context] = self.contexts.get(g.context_id)
                while cur is not None:
                    if cur.context_id not in seen:
                        seen.add(cur.context_id)
                        total += cur.token_count
                    cur = self.contexts.get(cur.parent_id) if cur.parent_id else None
            return total
        return sum(self._chain_tokens(self.contexts[g.context_id]) for g in running)

    # -- request lifecycle shared with the manager --------------------------

    def finish_generation(self, request_id: str) -> Optional[int]:
        """Release the request's hold; extend and register the post-output
        boundary hash on its leaf so later prompts can fork past the value.
        Returns the new boundary hash when one was registered."""
        g = self.gens.pop(request_id, None)
        if g is None:
            return None
        self.pending_fills.pop(request_id, None)
        self.charges.pop(request_id, None)
        self.holder_class.pop(request_id, None)
        self.request_leaf.pop(request_id, None)
        ctx = self.contexts.get(g.context_id)
        if ctx is None:
            return None
        ctx.refcount -= 1
        if ctx.refcount == 0 and ctx.dropped:
            # the leaf was dropped while this generation still held it; no
            # boundary to publish, the chain is already torn down
            self._discard_context(ctx)
            return None
        if not g.token_ids:
            return None
        seed = ctx.chain_hashes[-1] if ctx.chain_hashes else hash_token_ids([])
        end_hash = hash_token_ids(g.token_ids[: g.emitted], seed)
        ctx.chain_hashes.append(end_hash)
        if end_hash not in self.registry:
            self.registry[end_hash] = ctx.context_id
            ctx.registered_hashes.append(end_hash)
        return end_hash

    def cancel_request(self, request_id: str) -> None:
        self.fill_queue = deque(t for t in self.fill_queue if t.request_id != request_id)
        self.pending_fills.pop(request_id, None)
        self.charges.pop(request_id, None)
        self.holder_class.pop(request_id, None)
        self.request_leaf.pop(request_id, None)
        g = self.gens.pop(request_id, None)
        if g is not None:
            ctx = self.contexts.get(g.context_id)
            if ctx is not None:
                ctx.refcount -= 1
                ctx.dropped = True
                if ctx.refcount == 0:
                    self._discard_context(ctx)

    @property
    def charged_tokens(self) -> int:
        return sum(self.charges.values())

    def admitted_classes(self) -> List[str]:
        return sorted(set(self.holder_class.values()))


def format_ms(ns: int) -> str:
    """Milliseconds with up to three decimals, trailing zeros trimmed."""
    ms = ns / MS
    text = f"{ms:.3f}"
    return text.rstrip("0").rstrip(".") if "." in text else text
