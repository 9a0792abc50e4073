"""Cluster scheduler: ready-queue policy over simulated engines.

Requests enter the queue only once every input variable is Ready. Each tick
walks the queue in (arrival, id) order and tries, in order: whole task-group
placement, joint placement with queued prefix sharers, engines already holding
a shared context, then any engine. Placement charges an engine the prompt tokens no resident
holder is still charged for plus max_tokens, and admission keeps the sum of
charges within the tightest capacity class present on the engine (latency
holders clamp it). Engine choice minimizes capacity loss plus resulting
utilization; clamping idle capacity counts as loss, so latency work huddles
on as few engines as its admitted residency needs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Set, Tuple

GroupKey = Tuple[str, int]  # (session_id, group index within the session)

from .dag import SchedulingLabel
from .engine import Engine, format_ms
from .prefix import PrefixIndex, req_owner

LATENCY_CLASS = "latency"
THROUGHPUT_CLASS = "throughput"


@dataclass
class SchedulerConfig:
    latency_capacity: int = 6_144
    throughput_capacity: int = 64_000
    use_task_groups: bool = True
    prefix_affinity: bool = True

    def class_capacity(self, cls: str) -> int:
        return self.latency_capacity if cls == LATENCY_CLASS else self.throughput_capacity


@dataclass
class QueuedRequest:
    request_id: str
    arrival_ns: int
    chain_hashes: List[int]
    segment_tokens: List[List[int]]
    prompt_tokens: int
    max_tokens: int
    label: SchedulingLabel
    group_id: Optional[GroupKey] = None

    def indexable_hashes(self) -> List[int]:
        # boundaries covering zero tokens match everything; never index them
        out: List[int] = []
        covered = 0
        for i, h in enumerate(self.chain_hashes):
            covered += len(self.segment_tokens[i]) if i < len(self.segment_tokens) else 0
            if covered > 0:
                out.append(h)
        return out

    def sort_key(self) -> Tuple[int, str]:
        return (self.arrival_ns, self.request_id)


@dataclass
class Placement:
    engine_id: str
    request_ids: List[str]
    reason: str  # taskgroup | shared-queue | shared-ctx | solo
    group_id: Optional[GroupKey] = None


class Scheduler:
    def __init__(
        self,
        engines: Dict[str, Engine],
        index: PrefixIndex,
        config: Optional[SchedulerConfig] = None,
    ):
        self.engines = engines
        self.index = index
        self.config = config or SchedulerConfig()
        self.entries: Dict[str, QueuedRequest] = {}
        self.group_members: Dict[GroupKey, List[str]] = {}
        self.log: List[str] = []

    # -- queue maintenance ---------------------------------------------------

    def enqueue(self, entry: QueuedRequest) -> None:
        self.entries[entry.request_id] = entry

    def remove(self, request_id: str) -> None:
        self.entries.pop(request_id, None)

    def set_group_info(self, members: Dict[GroupKey, List[str]]) -> None:
        """Full expected membership per group, refreshed after each deduction."""
        self.group_members = {gid: list(rids) for gid, rids in members.items()}

    def sync_entry(self, request_id: str, label: SchedulingLabel, group_id: Optional[GroupKey]) -> None:
        entry = self.entries.get(request_id)
        if entry is not None:
            entry.label = label
            entry.group_id = group_id

    # -- request classes and bounds -------------------------------------------

    def _group_size(self, group_id: Optional[GroupKey]) -> int:
        if group_id is None:
            return 0
        return len(self.group_members.get(group_id, ()))

    def request_class(self, entry: QueuedRequest) -> str:
        # a group of one has nothing to co-schedule; it keeps its label class
        if self.config.use_task_groups and self._group_size(entry.group_id) >= 2:
            return THROUGHPUT_CLASS
        if entry.label is SchedulingLabel.LATENCY_SENSITIVE:
            # a request that alone exceeds the latency capacity can never be
            # admitted under it; treat it as throughput work instead
            if entry.prompt_tokens + entry.max_tokens <= self.config.latency_capacity:
                return LATENCY_CLASS
        return THROUGHPUT_CLASS

    def _bound(self, classes: Iterable[str]) -> int:
        caps = [self.config.class_capacity(c) for c in classes]
        return min(caps) if caps else self.config.throughput_capacity

    def _estimate_charges(self, engine: Engine, batch: Sequence[QueuedRequest]) -> List[int]:
        """Marginal charge per request were the batch admitted in order.

        The overlay marks boundaries earlier batch members would register, so
        a shared prefix is charged once to the first request that fills it.
        """
        overlay: Dict[int, str] = {}
        charges: List[int] = []
        for entry in batch:
            plan = engine.plan_prefix(entry.chain_hashes, entry.segment_tokens, overlay)
            charges.append(plan.marginal_tokens + plan.adopted_tokens + entry.max_tokens)
            for h in entry.indexable_hashes():
                overlay.setdefault(h, "planned")
        return charges

    def find_engine(
        self,
        batch: Sequence[QueuedRequest],
        classes: Sequence[str],
        restrict: Optional[Sequence[str]] = None,
    ) -> Optional[str]:
        candidates = sorted(restrict) if restrict is not None else sorted(self.engines)
        best_id: Optional[str] = None
        best_score = 0.0
        for eid in candidates:
            engine = self.engines.get(eid)
            if engine is None:
                continue
            charges = self._estimate_charges(engine, batch)
            est_after = engine.charged_tokens + sum(charges)
            present = set(engine.holder_class.values())
            bound_before = self._bound(present)
            bound_after = self._bound(present | set(classes))
            if est_after > bound_after:
                continue
            loss = max(0, bound_before - bound_after) / self.config.throughput_capacity
            utilization = est_after / bound_after
            score = loss + utilization
            if best_id is None or score < best_score:
                best_id = eid
                best_score = score
        return best_id

    # -- the tick --------------------------------------------------------------

    def tick(self, now_ns: int, place_fn: Callable[[Placement], bool]) -> List[Placement]:
        """One scheduling pass. place_fn executes a placement immediately so
        later decisions in the same pass see updated engine state."""
        made: List[Placement] = []
        pending = sorted(self.entries.values(), key=QueuedRequest.sort_key)
        handled: Set[str] = set()
        for entry in pending:
            rid = entry.request_id
            if rid in handled or rid not in self.entries:
                continue
            placement = self._decide(entry, handled)
            if placement is None:
                continue
            for pid in placement.request_ids:
                handled.add(pid)
                self.entries.pop(pid, None)
            if place_fn(placement):
                made.append(placement)
                self._log(now_ns, placement)
        return made

    def _decide(self, entry: QueuedRequest, handled: Set[str]) -> Optional[Placement]:
        grouped = self.config.use_task_groups and self._group_size(entry.group_id) >= 2
        if grouped:
            return self._decide_group(entry)

        if self.config.prefix_affinity:
            match = self.index.lookup(entry.chain_hashes, exclude={req_owner(entry.request_id)})
            if match:
                sharers = [
                    q
                    for q in match.queued
                    if q in self.entries
                    and q not in handled
                    and self._group_size(self.entries[q].group_id) < 2
                ]
                if sharers:
                    batch = sorted(
                        [entry] + [self.entries[q] for q in sharers],
                        key=QueuedRequest.sort_key,
                    )
                    classes = [self.request_class(b) for b in batch]
                    eid = self.find_engine(batch, classes)
                    if eid is not None:
                        return Placement(eid, [b.request_id for b in batch], "shared-queue")
                ctx_engines = sorted({engine_id for engine_id, _ in match.contexts})
                if ctx_engines:
                    eid = self.find_engine([entry], [self.request_class(entry)], restrict=ctx_engines)
                    if eid is not None:
                        return Placement(eid, [entry.request_id], "shared-ctx")

        eid = self.find_engine([entry], [self.request_class(entry)])
        if eid is not None:
            return Placement(eid, [entry.request_id], "solo")
        return None

    def _decide_group(self, entry: QueuedRequest) -> Optional[Placement]:
        gid = entry.group_id
        assert gid is not None
        members = self.group_members.get(gid, [entry.request_id])
        if any(m not in self.entries for m in members):
            return None  # group places as a unit; wait for the stragglers
        batch = sorted((self.entries[m] for m in members), key=QueuedRequest.sort_key)
        classes = [THROUGHPUT_CLASS] * len(batch)
        eid = self.find_engine(batch, classes)
        if eid is None:
            return None
        return Placement(eid, [b.request_id for b in batch], "taskgroup", group_id=gid)

    def _log(self, now_ns: int, placement: Placement) -> None:
        t = format_ms(now_ns)
        if placement.reason == "taskgroup":
            self.log.append(
                f"t={t} place req=group:{placement.group_id[1]} engine={placement.engine_id} reason=taskgroup"
            )
            return
        for rid in placement.request_ids:
            self.log.append(
                f"t={t} place req={rid} engine={placement.engine_id} reason={placement.reason}"
            )
