"""Per-session request DAG and scheduling-objective deduction.

Requests connect through semantic variables: a request consumes its input
variables and produces at most one output variable. Insertion keeps the
graph acyclic and producers unique. Deduction walks client annotations
backward: throughput marks every transitive producer, latency marks the
producing chain stage by stage and groups mutually independent requests at
equal stage distance into task groups.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Set

from .errors import (
    CycleDetected,
    DuplicateProducer,
    MalformedBody,
    NoAnnotatedOutput,
    UnknownSession,
    UnknownVariable,
)
from .prompting import (
    Criterion,
    Direction,
    PromptTemplate,
    SemanticVariable,
)


class SchedulingLabel(enum.Enum):
    UNLABELED = "unlabeled"
    LATENCY_SENSITIVE = "latency"
    THROUGHPUT_PREFERRED = "throughput"


class RequestStatus(enum.Enum):
    PENDING = "pending"      # inserted, inputs not yet all Ready
    QUEUED = "queued"        # ready, waiting for placement
    PLACED = "placed"        # admitted to an engine
    DONE = "done"
    FAILED = "failed"
    CANCELLED = "cancelled"


@dataclass
class SamplingParams:
    max_tokens: int = 512
    stop: Optional[str] = None
    temperature: float = 0.0  # recorded; the simulator never reads it


@dataclass
class Request:
    request_id: str
    session_id: str
    template: PromptTemplate
    bindings: Dict[str, str]  # placeholder name -> var_id
    sampling: SamplingParams = field(default_factory=SamplingParams)
    arrival_ns: int = 0
    scripted_output: Optional[str] = None
    label: SchedulingLabel = SchedulingLabel.UNLABELED
    task_group_id: Optional[int] = None
    stage_index: Optional[int] = None
    status: RequestStatus = RequestStatus.PENDING

    def input_var_ids(self) -> List[str]:
        return [
            self.bindings[p.name]
            for p in self.template.placeholders()
            if p.direction is Direction.INPUT
        ]

    def output_var_id(self) -> Optional[str]:
        out = self.template.output_placeholder()
        return self.bindings[out.name] if out else None


@dataclass
class TaskGroup:
    group_id: int
    request_ids: List[str]
    stage_index: int


class RequestDag:
    """One session's requests and variables."""

    def __init__(self, session_id: str):
        self.session_id = session_id
        self.vars: Dict[str, SemanticVariable] = {}
        self.requests: Dict[str, Request] = {}
        self.producer_of: Dict[str, str] = {}
        self.consumers_of: Dict[str, Set[str]] = {}
        self.task_groups: Dict[int, TaskGroup] = {}
        self._insert_order: List[str] = []

    # -- structure -----------------------------------------------------

    def ensure_var(self, var_id: str, name: str = "") -> SemanticVariable:
        var = self.vars.get(var_id)
        if var is None:
            var = SemanticVariable(var_id=var_id, session_id=self.session_id, name=name)
            self.vars[var_id] = var
            self.consumers_of.setdefault(var_id, set())
        return var

    def _reaches_any(self, start_var: str, targets: Set[str]) -> bool:
        """True if some target variable is downstream of start_var."""
        seen: Set[str] = set()
        frontier = [start_var]
        while frontier:
            vid = frontier.pop()
            if vid in targets:
                return True
            if vid in seen:
                continue
            seen.add(vid)
            for rid in self.consumers_of.get(vid, ()):
                out = self.requests[rid].output_var_id()
                if out is not None:
                    frontier.append(out)
        return False

    def insert_request(self, request: Request) -> None:
        if request.session_id != self.session_id:
            raise UnknownSession(
                f"request {request.request_id} belongs to {request.session_id}"
            )
        for p in request.template.placeholders():
            if p.name not in request.bindings:
                raise MalformedBody(f"placeholder {p.name!r} has no bound variable")
        out_var = request.output_var_id()
        if out_var is not None and out_var in self.producer_of:
            raise DuplicateProducer(
                f"variable {out_var} already produced by {self.producer_of[out_var]}",
                var_id=out_var,
            )
        inputs = set(request.input_var_ids())
        # adding edges inputs -> request -> out_var closes a cycle iff some
        # input is already reachable from the output variable (consuming your
        # own output is the degenerate case and needs no reachability walk)
        if out_var is not None and inputs:
            if out_var in inputs:
                raise CycleDetected(
                    f"request {request.request_id} consumes its own output {out_var}"
                )
            if out_var in self.vars and self._reaches_any(out_var, inputs):
                raise CycleDetected(
                    f"request {request.request_id} would close a cycle through {out_var}"
                )
        for p in request.template.placeholders():
            self.ensure_var(request.bindings[p.name], name=p.name)
        self.requests[request.request_id] = request
        self._insert_order.append(request.request_id)
        for vid in inputs:
            self.consumers_of[vid].add(request.request_id)
        if out_var is not None:
            self.producer_of[out_var] = request.request_id

    # -- queries ---------------------------------------------------------

    def get_var(self, var_id: str) -> SemanticVariable:
        var = self.vars.get(var_id)
        if var is None:
            raise UnknownVariable(f"unknown variable {var_id}", var_id=var_id)
        return var

    def get_producer(self, var_id: str) -> Optional[str]:
        self.get_var(var_id)
        return self.producer_of.get(var_id)

    def get_consumers(self, var_id: str) -> Set[str]:
        self.get_var(var_id)
        return set(self.consumers_of.get(var_id, ()))

    def get_perf_obj(self, var_id: str) -> Optional[Criterion]:
        return self.get_var(var_id).criterion

    def request_children(self, rid: str) -> List[str]:
        """Requests that consume rid's output, sorted for determinism."""
        out = self.requests[rid].output_var_id()
        if out is None:
            return []
        return sorted(self.consumers_of.get(out, ()))

    def request_parents(self, rid: str) -> List[str]:
        parents = []
        for vid in self.requests[rid].input_var_ids():
            prod = self.producer_of.get(vid)
            if prod is not None:
                parents.append(prod)
        return sorted(set(parents))

    def _descendants(self, rid: str) -> Set[str]:
        seen: Set[str] = set()
        frontier = [rid]
        while frontier:
            cur = frontier.pop()
            for child in self.request_children(cur):
                if child not in seen:
                    seen.add(child)
                    frontier.append(child)
        return seen

    def independent(self, a: str, b: str) -> bool:
        return b not in self._descendants(a) and a not in self._descendants(b)

    # -- objective deduction ----------------------------------------------

    def deduce_objectives(self) -> Dict[int, TaskGroup]:
        """Recompute labels, stages, and task groups from client annotations.

        Deterministic for a fixed dag and idempotent: reruns recompute from
        scratch using only get-attached criteria as seeds. Raises
        NoAnnotatedOutput when nothing is annotated (callers treat that as a
        no-op; unlabeled requests default to latency at scheduling time).
        """
        annotated = [
            v for v in self.vars.values() if v.criterion_source == "get" and v.criterion
        ]
        if not annotated:
            raise NoAnnotatedOutput(f"session {self.session_id} has no annotated output")

        for r in self.requests.values():
            r.label = SchedulingLabel.UNLABELED
            r.task_group_id = None
            r.stage_index = None
        self.task_groups = {}

        # throughput: every transitive producer of the annotated variable
        for var in sorted(annotated, key=lambda v: v.var_id):
            if var.criterion is not Criterion.THROUGHPUT:
                continue
            frontier = []
            prod = self.producer_of.get(var.var_id)
            if prod is not None:
                frontier.append(prod)
            seen: Set[str] = set()
            while frontier:
                rid = frontier.pop()
                if rid in seen:
                    continue
                seen.add(rid)
                self.requests[rid].label = SchedulingLabel.THROUGHPUT_PREFERRED
                frontier.extend(self.request_parents(rid))

        # latency: walk back from each annotated sink; stage is the longest
        # request-hop distance to the nearest sink; latency wins conflicts
        sinks = []
        for var in sorted(annotated, key=lambda v: v.var_id):
            if var.criterion is not Criterion.LATENCY:
                continue
            prod = self.producer_of.get(var.var_id)
            if prod is not None:
                sinks.append(prod)
        stage: Dict[str, int] = {}
        for sink in sinks:
            dist = self._longest_paths_to(sink)
            for rid, d in dist.items():
                if rid not in stage or d < stage[rid]:
                    stage[rid] = d
        for rid, d in stage.items():
            req = self.requests[rid]
            req.label = SchedulingLabel.LATENCY_SENSITIVE
            req.stage_index = d

        # deduced variable criteria never overwrite client gets
        for rid in sorted(self.requests):
            req = self.requests[rid]
            out = req.output_var_id()
            if out is None:
                continue
            if req.label is SchedulingLabel.LATENCY_SENSITIVE:
                self.vars[out].attach_criterion(Criterion.LATENCY, "deduced")
            elif req.label is SchedulingLabel.THROUGHPUT_PREFERRED:
                self.vars[out].attach_criterion(Criterion.THROUGHPUT, "deduced")

        # task groups: per stage, greedy partition into mutually independent
        # member sets, group ids assigned in ascending stage order
        next_gid = 0
        for stage_idx in sorted({d for d in stage.values()}):
            members = sorted(rid for rid, d in stage.items() if d == stage_idx)
            buckets: List[List[str]] = []
            for rid in members:
                placed = False
                for bucket in buckets:
                    if all(self.independent(rid, other) for other in bucket):
                        bucket.append(rid)
                        placed = True
                        break
                if not placed:
                    buckets.append([rid])
            for bucket in buckets:
                group = TaskGroup(next_gid, bucket, stage_idx)
                self.task_groups[next_gid] = group
                for rid in bucket:
                    self.requests[rid].task_group_id = next_gid
                next_gid += 1
        return self.task_groups

    def _longest_paths_to(self, sink: str) -> Dict[str, int]:
        """Longest request-hop distance to `sink` for every upstream request."""
        memo: Dict[str, Optional[int]] = {sink: 0}

        def walk(rid: str) -> Optional[int]:
            if rid in memo:
                return memo[rid]
            memo[rid] = None  # guards against revisits; dag has no cycles
            best: Optional[int] = None
            for child in self.request_children(rid):
                d = walk(child)
                if d is not None and (best is None or d + 1 > best):
                    best = d + 1
            memo[rid] = best
            return best

        out: Dict[str, int] = {}
        for rid in self.requests:
            d = walk(rid)
            if d is not None:
                out[rid] = d
        return out

    # -- debug surface -----------------------------------------------------

    def dump(self) -> List[str]:
        """One line per request: REQ <id> inputs=<vars> output=<var> label=<L> group=<G>."""
        lines = []
        for rid in sorted(self.requests):
            req = self.requests[rid]
            inputs = ",".join(req.input_var_ids()) or "-"
            output = req.output_var_id() or "-"
            group = req.task_group_id if req.task_group_id is not None else "-"
            lines.append(
                f"REQ {rid} inputs={inputs} output={output} "
                f"label={req.label.value} group={group}"
            )
        return lines
