"""Cluster manager: sessions, variable lifecycle, and the event loop.

Submit and get are split: submit records a request whose inputs may still be
Empty; the request enters the scheduler queue only when every input is Ready,
keeping its original submit time as queue priority. Variable publication is
exactly-once; consumers registered after the terminal transition are notified
immediately. Output transforms run producer-side, and a failed transform
fails the variable with a payload naming the transform and producing request.

Time is integer nanoseconds on a virtual clock. The simulation loop is
discrete-event: all client events at one timestamp drain before engines step,
so criteria attached at submit time shape the very first scheduling pass.
Serve mode runs the same loop on a thread, pacing virtual time against the
wall clock and waking blocked gets as variables resolve.
"""

from __future__ import annotations

import functools
import heapq
import itertools
import threading
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Set, Tuple

from .config import Config
from .dag import (
    Request,
    RequestDag,
    RequestStatus,
    SamplingParams,
    SchedulingLabel,
)
from .engine import Context, CostModel, Engine
from .errors import (
    AlreadySet,
    MalformedBody,
    NoAnnotatedOutput,
    OutOfMemory,
    SessionClosed,
    UnknownSession,
    UnknownVariable,
)
from .prefix import PrefixIndex, ctx_owner, render_prefix, req_owner
from .prompting import (
    Criterion,
    FailureInfo,
    IDENTITY,
    PromptTemplate,
    SemanticVariable,
    VarState,
    apply_transform,
    parse_prompt_template,
    serialize_transform_spec,
)
from .scheduler import (
    GroupKey,
    Placement,
    QueuedRequest,
    Scheduler,
    SchedulerConfig,
)
from .tokenizer import ReferenceTokenizer


@dataclass
class Session:
    session_id: str
    dag: RequestDag
    open: bool = True
    contexts: List[Tuple[str, str]] = field(default_factory=list)  # (engine_id, ctx_id)


@dataclass
class RequestRuntime:
    request_id: str
    session_id: str
    arrival_ns: int
    gen_token_ids: List[int] = field(default_factory=list)
    value_text: str = ""
    queued_ns: Optional[int] = None
    placed_ns: Optional[int] = None
    completed_ns: Optional[int] = None
    engine_id: Optional[str] = None
    leaf_context: Optional[str] = None
    entry: Optional[QueuedRequest] = None
    prompt_tokens: int = 0
    reused_tokens: int = 0


@dataclass
class GetRecord:
    var_id: str
    criterion: str
    requested_ns: int
    resolved_ns: Optional[int] = None


def _locked(method):
    """Serve mode runs the clock on a background thread while HTTP handlers
    call in from a threadpool; every public entry point must hold the manager
    lock. The lock is reentrant, so internal cross-calls stay cheap."""

    @functools.wraps(method)
    def wrapper(self, *args, **kwargs):
        with self.lock:
            return method(self, *args, **kwargs)

    return wrapper


class SemanticManager:
    def __init__(
        self,
        config: Optional[Config] = None,
        scheduler_config: Optional[SchedulerConfig] = None,
        force_label: Optional[SchedulingLabel] = None,
        prefix_reuse: bool = True,
    ):
        self.config = config or Config()
        self.cost = CostModel(
            c0_ms=self.config.c0_ms,
            c1_ms=self.config.c1_ms,
            c2_ms=self.config.c2_ms,
            c3_ms=self.config.c3_ms,
            shared_kernel=self.config.shared_kernel,
            block_size=self.config.block_size,
        )
        self.engines: Dict[str, Engine] = {}
        for i in range(self.config.engines):
            eid = f"e{i}"
            engine = Engine(
                eid,
                self.cost,
                kv_tokens=self.config.kv_tokens,
                token_capacity=self.config.throughput_capacity,
            )
            engine.store.total_blocks = self.config.blocks_total()
            self.engines[eid] = engine
        self.prefix_reuse = prefix_reuse
        for engine in self.engines.values():
            engine.reuse_enabled = prefix_reuse
        self.index = PrefixIndex()
        self.scheduler = Scheduler(self.engines, self.index, scheduler_config)
        self.force_label = force_label
        self.tokenizer = ReferenceTokenizer()

        self.sessions: Dict[str, Session] = {}
        self.var_owner: Dict[str, str] = {}  # var_id -> session_id
        self.runtimes: Dict[str, RequestRuntime] = {}
        self.pending_inputs: Dict[str, Set[str]] = {}  # request -> unresolved vars
        self.waiters_by_var: Dict[str, Set[str]] = {}  # var -> requests blocked on it
        self.var_callbacks: Dict[str, List[Callable[[int], None]]] = {}
        self.get_records: List[GetRecord] = []
        self.submit_count = 0

        self.now_ns = 0
        self._events: List[Tuple[int, int, Callable[[int], None]]] = []
        self._event_seq = itertools.count()
        self._session_seq = itertools.count()
        self._request_seq = itertools.count()
        self._dirty_sessions: Set[str] = set()

        # serve mode plumbing
        self.lock = threading.RLock()
        self.cond = threading.Condition(self.lock)
        self._serve_thread: Optional[threading.Thread] = None
        self._stop_serving = threading.Event()

    # -- sessions ------------------------------------------------------------

    @_locked
    def create_session(self, session_id: Optional[str] = None) -> str:
        sid = session_id or f"s{next(self._session_seq)}"
        if sid in self.sessions:
            raise AlreadySet(f"session {sid} already exists")
        self.sessions[sid] = Session(sid, RequestDag(sid))
        return sid

    def _session(self, session_id: str) -> Session:
        sess = self.sessions.get(session_id)
        if sess is None:
            raise UnknownSession(f"unknown session {session_id}")
        if not sess.open:
            raise SessionClosed(f"session {session_id} is closed")
        return sess

    @_locked
    def close_session(self, session_id: str) -> None:
        sess = self.sessions.get(session_id)
        if sess is None:
            raise UnknownSession(f"unknown session {session_id}")
        if not sess.open:
            return
        sess.open = False
        for request in list(sess.dag.requests.values()):
            rid = request.request_id
            if request.status in (RequestStatus.DONE, RequestStatus.FAILED):
                continue
            request.status = RequestStatus.CANCELLED
            self.scheduler.remove(rid)
            self.index.remove(req_owner(rid))
            rt = self.runtimes.get(rid)
            if rt is not None and rt.engine_id is not None:
                self.engines[rt.engine_id].cancel_request(rid)
            self.pending_inputs.pop(rid, None)
            out = request.output_var_id()
            if out is not None:
                var = sess.dag.vars.get(out)
                if var is not None and not var.is_terminal():
                    var.set_failed(
                        FailureInfo("session_closed", "session closed", rid, None, out),
                        self.now_ns,
                    )
                    self._publish(var)
        for engine_id, ctx_id in sess.contexts:
            engine = self.engines[engine_id]
            if ctx_id in engine.contexts:
                owner = ctx_owner(engine_id, ctx_id)
                self.index.remove(owner)
                engine.mark_dropped(ctx_id)
        sess.contexts = []
        with self.cond:
            self.cond.notify_all()

    # -- variables -------------------------------------------------------------

    def _ensure_var(self, session_id: str, var_id: str, name: str = "") -> SemanticVariable:
        owner = self.var_owner.get(var_id)
        if owner is None:
            sess = self._session(session_id)
            var = sess.dag.ensure_var(var_id, name)
            self.var_owner[var_id] = session_id
            return var
        if owner != session_id:
            # dags are session-scoped; referencing another session's variable
            # is indistinguishable from referencing a nonexistent one
            raise UnknownVariable(f"variable {var_id} belongs to another session")
        return self.sessions[owner].dag.vars[var_id]

    def lookup_var(self, var_id: str) -> SemanticVariable:
        owner = self.var_owner.get(var_id)
        if owner is None:
            raise UnknownVariable(f"unknown variable {var_id}")
        return self.sessions[owner].dag.vars[var_id]

    @_locked
    def set_variable(self, session_id: str, var_id: str, value: str, name: str = "") -> None:
        self._session(session_id)
        var = self._ensure_var(session_id, var_id, name)
        var.set_ready(value, self.now_ns)
        self._publish(var)

    @_locked
    def get_variable(
        self,
        var_id: str,
        criterion: Optional[Criterion] = None,
        session_id: Optional[str] = None,
    ) -> SemanticVariable:
        """Attach a performance criterion and mark the variable awaited.

        Deduction reruns so the annotation reshapes labels, stages, and task
        groups of everything upstream.
        """
        var = self.lookup_var(var_id)
        if criterion is not None:
            var.attach_criterion(criterion, "get")
        self.get_records.append(GetRecord(var_id, criterion.value if criterion else "", self.now_ns))
        owner = self.var_owner[var_id]
        self._dirty_sessions.add(owner)
        self._sync_deduction()
        if var.is_terminal():
            self.get_records[-1].resolved_ns = var.ready_at_ns
        else:
            record = self.get_records[-1]

            def _resolve(now: int, record: GetRecord = record) -> None:
                record.resolved_ns = now

            self.on_var_terminal(var_id, _resolve)
        return var

    @_locked
    def on_var_terminal(self, var_id: str, fn: Callable[[int], None]) -> None:
        """Exactly-once notification; fires immediately if already terminal."""
        var = self.lookup_var(var_id)
        if var.is_terminal():
            fn(self.now_ns)
            return
        self.var_callbacks.setdefault(var_id, []).append(fn)

    # -- submit ------------------------------------------------------------------

    @_locked
    def submit(
        self,
        session_id: str,
        prompt: str,
        bindings: Dict[str, str],
        sampling: Optional[SamplingParams] = None,
        script: str = "",
        template: Optional[PromptTemplate] = None,
    ) -> str:
        """Register a request; returns its id. `bindings` maps placeholder
        names to semantic variable ids (unknown ids are created here)."""
        sess = self._session(session_id)
        tpl = template if template is not None else parse_prompt_template(prompt)
        sampling = sampling or SamplingParams()
        for ph in tpl.placeholders():
            if ph.name not in bindings:
                raise MalformedBody(f"placeholder {ph.name} has no variable binding")
            self._ensure_var(session_id, bindings[ph.name], ph.name)
        rid = f"r{next(self._request_seq)}"
        request = Request(
            request_id=rid,
            session_id=session_id,
            template=tpl,
            bindings=dict(bindings),
            sampling=sampling,
            arrival_ns=self.now_ns,
            scripted_output=script,
        )
        sess.dag.insert_request(request)
        self.submit_count += 1
        gen_tokens, value_text = self._effective_output(script, sampling)
        rt = RequestRuntime(
            request_id=rid,
            session_id=session_id,
            arrival_ns=self.now_ns,
            gen_token_ids=gen_tokens,
            value_text=value_text,
        )
        self.runtimes[rid] = rt
        self._dirty_sessions.add(session_id)
        self._sync_deduction()

        unresolved: Set[str] = set()
        failed_input: Optional[SemanticVariable] = None
        for vid in request.input_var_ids():
            var = self.lookup_var(vid)
            if var.state is VarState.FAILED:
                failed_input = var
                break
            if var.state is VarState.EMPTY:
                unresolved.add(vid)
        if failed_input is not None:
            self._fail_request(request, self._propagated_failure(failed_input, request))
            return rid
        if unresolved:
            self.pending_inputs[rid] = unresolved
            for vid in unresolved:
                self.waiters_by_var.setdefault(vid, set()).add(rid)
        else:
            self._enqueue_ready(request)
        return rid

    def _effective_output(self, script: str, sampling: SamplingParams) -> Tuple[List[int], str]:
        """Apply stop-string and max_tokens truncation to the scripted output.

        The returned text is exactly the emitted token span of the original
        script, so downstream transforms see verbatim text.
        """
        text = script
        if sampling.stop:
            cut = text.find(sampling.stop)
            if cut >= 0:
                text = text[:cut]
        tokens = self.tokenizer.tokenize(text)
        limit = max(0, sampling.max_tokens)
        if len(tokens) > limit:
            if limit == 0:
                return [], ""
            spans = self.tokenizer.piece_spans(text)
            end = spans[limit - 1][1]
            return tokens[:limit], text[:end]
        return tokens, text

    # -- deduction sync -----------------------------------------------------------

    def _sync_deduction(self) -> None:
        if not self._dirty_sessions:
            return
        for sid in sorted(self._dirty_sessions):
            sess = self.sessions.get(sid)
            if sess is None or not sess.open:
                continue
            try:
                sess.dag.deduce_objectives()
            except NoAnnotatedOutput:
                pass
            if self.force_label is not None:
                for request in sess.dag.requests.values():
                    request.label = self.force_label
                    request.task_group_id = None
                sess.dag.task_groups = {}
        self._dirty_sessions.clear()
        members: Dict[GroupKey, List[str]] = {}
        for sid, sess in self.sessions.items():
            if not sess.open:
                continue
            for gid, group in sess.dag.task_groups.items():
                # only requests that can still co-start count as group members;
                # a finished or running member would hold the rest forever
                live = [
                    rid
                    for rid in group.request_ids
                    if sess.dag.requests[rid].status
                    in (RequestStatus.PENDING, RequestStatus.QUEUED)
                ]
                if live:
                    members[(sid, gid)] = live
        self.scheduler.set_group_info(members)
        for sid, sess in self.sessions.items():
            if not sess.open:
                continue
            for request in sess.dag.requests.values():
                if request.status is RequestStatus.QUEUED:
                    gkey = (sid, request.task_group_id) if request.task_group_id is not None else None
                    self.scheduler.sync_entry(request.request_id, request.label, gkey)
                    rt = self.runtimes.get(request.request_id)
                    if rt is not None and rt.entry is not None:
                        rt.entry.label = request.label
                        rt.entry.group_id = gkey

    # -- queueing and placement ------------------------------------------------------

    def _enqueue_ready(self, request: Request) -> None:
        rid = request.request_id
        rt = self.runtimes[rid]
        sess = self.sessions[request.session_id]
        values: Dict[str, str] = {}
        for vid in request.input_var_ids():
            values[vid] = self.lookup_var(vid).value or ""
        rendered = render_prefix(request, values, self.tokenizer)
        gkey: Optional[GroupKey] = None
        if request.task_group_id is not None:
            gkey = (request.session_id, request.task_group_id)
        entry = QueuedRequest(
            request_id=rid,
            arrival_ns=request.arrival_ns,
            chain_hashes=rendered.chain.hashes(),
            segment_tokens=[list(s) for s in rendered.segment_tokens],
            prompt_tokens=rendered.total_tokens(),
            max_tokens=max(0, request.sampling.max_tokens),
            label=request.label,
            group_id=gkey,
        )
        rt.entry = entry
        rt.queued_ns = self.now_ns
        rt.prompt_tokens = entry.prompt_tokens
        request.status = RequestStatus.QUEUED
        if self.prefix_reuse:
            self.index.insert(req_owner(rid), entry.indexable_hashes())
        self.scheduler.enqueue(entry)

    def _place(self, placement: Placement) -> bool:
        engine = self.engines[placement.engine_id]
        ok = True
        for rid in placement.request_ids:
            if not self._place_one(rid, engine):
                ok = False
        return ok

    def _place_one(self, rid: str, engine: Engine) -> bool:
        rt = self.runtimes[rid]
        entry = rt.entry
        assert entry is not None
        sess = self.sessions[rt.session_id]
        request = sess.dag.requests[rid]
        self.index.remove(req_owner(rid))
        plan = engine.plan_prefix(entry.chain_hashes, entry.segment_tokens)
        engine.clock_ns = max(engine.clock_ns, self.now_ns)
        parent = plan.reuse_context_id
        created: List[str] = []
        try:
            for tokens, boundary in plan.fill_segments:
                cid = engine.new_context_id()
                engine.fill(tokens, cid, parent, request_id=rid, boundary_hash=boundary)
                created.append(cid)
                parent = cid
            if created:
                leaf = created[-1]
            else:
                leaf = engine.new_context_id()
                engine.create_context(leaf, parent)
                created.append(leaf)
        except OutOfMemory as exc:
            engine.cancel_request(rid)
            for cid in reversed(created):
                if cid in engine.contexts and engine.contexts[cid].refcount == 0:
                    engine.free_context(cid)
            self._fail_request(
                request,
                FailureInfo("out_of_memory", str(exc), rid, None, request.output_var_id()),
            )
            return False
        engine.generate(rid, leaf, rt.gen_token_ids, rt.value_text)
        engine.charges[rid] = plan.marginal_tokens + plan.adopted_tokens + entry.max_tokens
        engine.holder_class[rid] = self.scheduler.request_class(entry)
        for cid in created:
            ctx = engine.contexts[cid]
            if self.prefix_reuse:
                self.index.insert(ctx_owner(engine.engine_id, cid), list(ctx.chain_hashes))
            sess.contexts.append((engine.engine_id, cid))
        rt.engine_id = engine.engine_id
        rt.leaf_context = leaf
        rt.placed_ns = self.now_ns
        rt.reused_tokens = plan.reused_tokens
        request.status = RequestStatus.PLACED
        return True

    def _tick(self) -> None:
        self._sync_deduction()
        self.scheduler.tick(self.now_ns, self._place)

    # -- completion flow ----------------------------------------------------------

    def _propagated_failure(self, var: SemanticVariable, request: Request) -> FailureInfo:
        info = var.failure
        out = request.output_var_id()
        if info is None:
            return FailureInfo("upstream_failed", f"input {var.var_id} failed", request.request_id, None, out)
        return FailureInfo("upstream_failed", info.message, info.producer_request_id, info.transform, out)

    def _fail_request(self, request: Request, info: FailureInfo) -> None:
        request.status = RequestStatus.FAILED
        out = request.output_var_id()
        if out is None:
            return
        var = self.lookup_var(out)
        if not var.is_terminal():
            var.set_failed(info, self.now_ns)
            self._publish(var)

    def _complete_request(self, rid: str) -> None:
        rt = self.runtimes[rid]
        sess = self.sessions[rt.session_id]
        request = sess.dag.requests[rid]
        engine = self.engines[rt.engine_id] if rt.engine_id else None
        if engine is not None:
            end_hash = engine.finish_generation(rid)
            if end_hash is not None and self.prefix_reuse and rt.leaf_context in engine.contexts:
                ctx = engine.contexts[rt.leaf_context]
                self.index.insert(ctx_owner(engine.engine_id, ctx.context_id), list(ctx.chain_hashes))
        rt.completed_ns = self.now_ns
        request.status = RequestStatus.DONE
        out = request.output_var_id()
        if out is None:
            return
        var = self.lookup_var(out)
        if var.is_terminal():
            return
        out_ph = request.template.output_placeholder()
        assert out_ph is not None
        spec = out_ph.transform if out_ph.transform is not None else IDENTITY
        try:
            value = apply_transform(spec, rt.value_text)
        except Exception as exc:
            code = getattr(exc, "code", "transform_failed")
            var.set_failed(
                FailureInfo(code, str(exc), rid, serialize_transform_spec(spec), out),
                self.now_ns,
            )
            self._publish(var)
            return
        var.set_ready(value, self.now_ns)
        self._publish(var)

    def _fail_running(self, rid: str, reason: str) -> None:
        rt = self.runtimes[rid]
        sess = self.sessions[rt.session_id]
        request = sess.dag.requests[rid]
        if rt.engine_id is not None:
            self.engines[rt.engine_id].cancel_request(rid)
        rt.completed_ns = self.now_ns
        self._fail_request(
            request, FailureInfo("out_of_memory", reason, rid, None, request.output_var_id())
        )

    def _publish(self, var: SemanticVariable) -> None:
        """Deliver a terminal transition: wake callbacks and dependents."""
        for fn in self.var_callbacks.pop(var.var_id, []):
            fn(self.now_ns)
        waiting = self.waiters_by_var.pop(var.var_id, set())
        for rid in sorted(waiting):
            pending = self.pending_inputs.get(rid)
            if pending is None:
                continue
            pending.discard(var.var_id)
            rt = self.runtimes.get(rid)
            request = self.sessions[rt.session_id].dag.requests[rid] if rt else None
            if request is None or request.status is not RequestStatus.PENDING:
                continue
            if var.state is VarState.FAILED:
                self.pending_inputs.pop(rid, None)
                self._fail_request(request, self._propagated_failure(var, request))
            elif not pending:
                self.pending_inputs.pop(rid, None)
                self._enqueue_ready(request)
        with self.cond:
            self.cond.notify_all()

    # -- the event loop --------------------------------------------------------------

    @_locked
    def schedule_at(self, time_ns: int, fn: Callable[[int], None]) -> None:
        heapq.heappush(self._events, (time_ns, next(self._event_seq), fn))

    def schedule_after(self, delay_ns: int, fn: Callable[[int], None]) -> None:
        self.schedule_at(self.now_ns + delay_ns, fn)

    def _busy_engines(self) -> List[Engine]:
        return [e for e in self.engines.values() if e.has_work()]

    def _drain_events_at(self, t: int) -> None:
        self.now_ns = t
        while self._events and self._events[0][0] == t:
            _, _, fn = heapq.heappop(self._events)
            fn(t)
        self._tick()

    def _step_engine(self, engine: Engine) -> None:
        report = engine.step()
        if report is None:
            return
        self.now_ns = max(self.now_ns, engine.clock_ns)
        changed = False
        for rid in report.finished:
            self._complete_request(rid)
            changed = True
        for rid, reason in report.failed:
            self._fail_running(rid, reason)
            changed = True
        if changed:
            self._tick()

    @_locked
    def run_until_idle(self, max_ns: Optional[int] = None) -> int:
        """Advance the virtual clock until no events remain and all engines
        are idle. Returns the final virtual time."""
        self._tick()
        while True:
            busy = self._busy_engines()
            next_event = self._events[0][0] if self._events else None
            next_engine = min(busy, key=lambda e: (e.clock_ns, e.engine_id)) if busy else None
            if next_event is None and next_engine is None:
                return self.now_ns
            if max_ns is not None and self.now_ns >= max_ns:
                return self.now_ns
            if next_event is not None and (
                next_engine is None or next_event <= next_engine.clock_ns
            ):
                self._drain_events_at(next_event)
            else:
                assert next_engine is not None
                self._step_engine(next_engine)

    # -- serve mode --------------------------------------------------------------

    def start_serving(self) -> None:
        if self._serve_thread is not None:
            return
        self._stop_serving.clear()
        self._serve_thread = threading.Thread(target=self._serve_loop, daemon=True)
        self._serve_thread.start()

    def stop_serving(self) -> None:
        self._stop_serving.set()
        if self._serve_thread is not None:
            self._serve_thread.join(timeout=5)
            self._serve_thread = None

    def _serve_loop(self) -> None:
        import time as _time

        quantum_ns = 1_000_000  # 1ms of virtual time when idle
        while not self._stop_serving.is_set():
            with self.lock:
                before = self.now_ns
                busy = self._busy_engines()
                next_event = self._events[0][0] if self._events else None
                if next_event is not None and (
                    not busy or next_event <= min(e.clock_ns for e in busy)
                ):
                    self._drain_events_at(next_event)
                elif busy:
                    engine = min(busy, key=lambda e: (e.clock_ns, e.engine_id))
                    self._step_engine(engine)
                else:
                    self.now_ns += quantum_ns
                    self._tick()
                elapsed = max(0, self.now_ns - before)
            wall = elapsed * self.config.time_scale / 1e9
            if wall > 0:
                _time.sleep(min(wall, 0.05))
            else:
                _time.sleep(0)

    def get_blocking(
        self,
        var_id: str,
        criterion: Optional[Criterion],
        session_id: Optional[str] = None,
        timeout_s: Optional[float] = None,
    ) -> SemanticVariable:
        """Serve-mode get: attach the criterion then wait for the terminal
        transition, raising GetTimeout past the deadline."""
        from .errors import GetTimeout

        deadline = timeout_s if timeout_s is not None else self.config.get_timeout_s
        with self.cond:
            var = self.get_variable(var_id, criterion, session_id)
            self.cond.notify_all()
            import time as _time

            end = _time.monotonic() + deadline
            while not var.is_terminal():
                remaining = end - _time.monotonic()
                if remaining <= 0:
                    raise GetTimeout(f"variable {var_id} not ready within {deadline}s")
                owner = self.var_owner.get(var_id)
                if owner is not None and not self.sessions[owner].open:
                    raise SessionClosed(f"session {owner} closed while waiting")
                self.cond.wait(timeout=min(remaining, 0.05))
        return var

    # -- reporting ---------------------------------------------------------------

    @_locked
    def dump_dags(self) -> str:
        lines: List[str] = []
        for sid in sorted(self.sessions):
            lines.extend(self.sessions[sid].dag.dump())
        return "\n".join(lines)

    @_locked
    def engine_traces(self) -> Dict[str, List[str]]:
        return {eid: list(e.trace) for eid, e in self.engines.items()}

    @_locked
    def scheduler_log(self) -> List[str]:
        return list(self.scheduler.log)

    @_locked
    def peak_blocks(self) -> Dict[str, int]:
        return {eid: e.store.peak_used for eid, e in self.engines.items()}
