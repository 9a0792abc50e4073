"""End-to-end tests for the orchestration layer: sessions, variable flow,
request chaining through the simulated engines, failure propagation, and
prefix reuse across turns."""

import dataclasses

import pytest

from semflow.config import Config
from semflow.dag import RequestStatus, SamplingParams, SchedulingLabel
from semflow.errors import (
    AlreadySet,
    CycleDetected,
    DuplicateProducer,
    GetTimeout,
    MalformedBody,
    SessionClosed,
    UnknownSession,
    UnknownVariable,
)
from semflow.manager import SemanticManager
from semflow.prompting import Criterion, VarState, parse_prompt_template, parse_transform_spec
from semflow.tokenizer import ReferenceTokenizer


CODE_TPL = "Write python code of {{input:task}}.\n Code: {{output:code}}"
TEST_TPL = "Test the code {{input:code}}.\n Tests: {{output:test}}"


def submit_pipeline(mgr, sid):
    # two-step chain: task -> code -> test
    r0 = mgr.submit(
        sid,
        CODE_TPL,
        {"task": "v_task", "code": "v_code"},
        sampling=SamplingParams(max_tokens=64),
        script="print(sorted(xs))",
    )
    r1 = mgr.submit(
        sid,
        TEST_TPL,
        {"code": "v_code", "test": "v_test"},
        sampling=SamplingParams(max_tokens=32),
        script="assert sorted([2, 1]) == [1, 2]",
    )
    return r0, r1


class TestChaining:
    def test_chain_completes_and_consumer_starts_at_producer_finish(self):
        mgr = SemanticManager()
        sid = mgr.create_session("s")
        r0, r1 = submit_pipeline(mgr, sid)
        mgr.get_variable("v_test", Criterion.LATENCY, sid)
        mgr.set_variable(sid, "v_task", "sorting a list")
        end = mgr.run_until_idle()

        v_code = mgr.lookup_var("v_code")
        v_test = mgr.lookup_var("v_test")
        assert v_code.state is VarState.READY
        assert v_code.value == "print(sorted(xs))"
        assert v_test.state is VarState.READY
        assert v_test.value == "assert sorted([2, 1]) == [1, 2]"

        rt0, rt1 = mgr.runtimes[r0], mgr.runtimes[r1]
        assert rt0.placed_ns == 0
        # the consumer enters the queue and is placed in the same tick that
        # completes its producer: no think-time gap, no polling delay
        assert rt1.queued_ns == rt0.completed_ns
        assert rt1.placed_ns == rt0.completed_ns
        assert rt1.completed_ns == end == mgr.now_ns
        assert mgr.get_records[-1].resolved_ns == rt1.completed_ns

    def test_submit_before_inputs_resolve_keeps_request_pending(self):
        mgr = SemanticManager()
        sid = mgr.create_session("s")
        r0, _ = submit_pipeline(mgr, sid)
        req = mgr.sessions[sid].dag.requests[r0]
        assert req.status is RequestStatus.PENDING
        assert mgr.pending_inputs[r0] == {"v_task"}
        mgr.set_variable(sid, "v_task", "x")
        assert req.status is RequestStatus.QUEUED
        assert r0 not in mgr.pending_inputs

    def test_event_schedule_drives_arrival_time(self):
        mgr = SemanticManager()
        sid = mgr.create_session("s")
        r0, _ = submit_pipeline(mgr, sid)
        mgr.schedule_after(5_000_000, lambda t: mgr.set_variable(sid, "v_task", "x"))
        mgr.run_until_idle()
        rt0 = mgr.runtimes[r0]
        assert rt0.queued_ns == 5_000_000
        assert rt0.placed_ns == 5_000_000


class TestDeduction:
    def test_latency_get_labels_and_stages_chain(self):
        mgr = SemanticManager()
        sid = mgr.create_session("s")
        r0, r1 = submit_pipeline(mgr, sid)
        mgr.get_variable("v_test", Criterion.LATENCY, sid)
        dag = mgr.sessions[sid].dag
        assert dag.requests[r0].label is SchedulingLabel.LATENCY_SENSITIVE
        assert dag.requests[r1].label is SchedulingLabel.LATENCY_SENSITIVE
        # r1 produces the awaited sink, r0 sits one hop upstream
        assert dag.requests[r1].task_group_id == 0
        assert dag.requests[r0].task_group_id == 1
        assert mgr.scheduler.group_members[(sid, 0)] == [r1]
        assert mgr.scheduler.group_members[(sid, 1)] == [r0]

    def test_throughput_get_labels_without_groups(self):
        mgr = SemanticManager()
        sid = mgr.create_session("s")
        r0, r1 = submit_pipeline(mgr, sid)
        mgr.get_variable("v_test", Criterion.THROUGHPUT, sid)
        dag = mgr.sessions[sid].dag
        assert dag.requests[r0].label is SchedulingLabel.THROUGHPUT_PREFERRED
        assert dag.requests[r1].label is SchedulingLabel.THROUGHPUT_PREFERRED
        assert dag.task_groups == {}

    def test_force_label_overrides_deduction(self):
        mgr = SemanticManager(force_label=SchedulingLabel.THROUGHPUT_PREFERRED)
        sid = mgr.create_session("s")
        r0, r1 = submit_pipeline(mgr, sid)
        mgr.get_variable("v_test", Criterion.LATENCY, sid)
        dag = mgr.sessions[sid].dag
        assert dag.requests[r0].label is SchedulingLabel.THROUGHPUT_PREFERRED
        assert dag.requests[r1].label is SchedulingLabel.THROUGHPUT_PREFERRED
        assert dag.task_groups == {}
        assert "group=-" in mgr.dump_dags()


def failing_json_template():
    tpl = parse_prompt_template("Emit json for {{input:seed}}: {{output:raw}}")
    segments = []
    for seg in tpl.segments:
        if hasattr(seg, "direction") and seg.name == "raw":
            seg = dataclasses.replace(seg, transform=parse_transform_spec("json:code"))
        segments.append(seg)
    return dataclasses.replace(tpl, segments=segments)


class TestFailurePropagation:
    def setup_chain(self, mgr, sid):
        # r_a's output transform fails (script is not JSON); r_b and r_c chain after
        r_a = mgr.submit(
            sid,
            "Emit json for {{input:seed}}: {{output:raw}}",
            {"seed": "v_seed", "raw": "v_raw"},
            script="definitely not json",
            template=failing_json_template(),
        )
        r_b = mgr.submit(
            sid, "Refine {{input:raw}} {{output:mid}}", {"raw": "v_raw", "mid": "v_mid"}
        )
        r_c = mgr.submit(
            sid, "Polish {{input:mid}} {{output:fin}}", {"mid": "v_mid", "fin": "v_fin"}
        )
        return r_a, r_b, r_c

    def test_transform_failure_cascades_with_original_producer(self):
        mgr = SemanticManager()
        sid = mgr.create_session("s")
        r_a, r_b, r_c = self.setup_chain(mgr, sid)
        mgr.set_variable(sid, "v_seed", "anything")
        mgr.run_until_idle()

        v_raw = mgr.lookup_var("v_raw")
        assert v_raw.state is VarState.FAILED
        assert v_raw.failure.code == "transform_failed"
        assert v_raw.failure.producer_request_id == r_a
        assert v_raw.failure.transform == "json:code"
        assert "not JSON" in v_raw.failure.message

        for vid in ("v_mid", "v_fin"):
            var = mgr.lookup_var(vid)
            assert var.state is VarState.FAILED
            assert var.failure.code == "upstream_failed"
            # blame stays on the original producer through the whole cascade
            assert var.failure.producer_request_id == r_a
            assert var.failure.transform == "json:code"
            assert var.failure.message == v_raw.failure.message
            assert var.failure.var_id == vid

        dag = mgr.sessions[sid].dag
        for rid in (r_b, r_c):
            assert dag.requests[rid].status is RequestStatus.FAILED

    def test_submit_against_already_failed_input_fails_immediately(self):
        mgr = SemanticManager()
        sid = mgr.create_session("s")
        r_a, _, _ = self.setup_chain(mgr, sid)
        mgr.set_variable(sid, "v_seed", "anything")
        mgr.run_until_idle()
        r_d = mgr.submit(
            sid, "Retry {{input:raw}} {{output:alt}}", {"raw": "v_raw", "alt": "v_alt"}
        )
        assert mgr.sessions[sid].dag.requests[r_d].status is RequestStatus.FAILED
        v_alt = mgr.lookup_var("v_alt")
        assert v_alt.failure.code == "upstream_failed"
        assert v_alt.failure.producer_request_id == r_a


class TestSessions:
    def test_close_cancels_pending_and_frees_blocks(self):
        mgr = SemanticManager()
        sid = mgr.create_session("s")
        done = mgr.submit(
            sid, "Say hi {{output:v_hi}}", {"v_hi": "v_hi"}, script="hi there"
        )
        mgr.run_until_idle()
        waiting = mgr.submit(
            sid, "Use {{input:v_never}} {{output:v_out}}", {"v_never": "v_never", "v_out": "v_out"}
        )
        engine = mgr.engines["e0"]
        assert engine.store.used_blocks > 0

        mgr.close_session(sid)

        dag = mgr.sessions[sid].dag
        assert dag.requests[done].status is RequestStatus.DONE
        assert dag.requests[waiting].status is RequestStatus.CANCELLED
        v_out = mgr.lookup_var("v_out")
        assert v_out.state is VarState.FAILED
        assert v_out.failure.code == "session_closed"
        assert engine.store.used_blocks == 0
        assert mgr.sessions[sid].contexts == []

        with pytest.raises(SessionClosed):
            mgr.submit(sid, "X {{output:v2}}", {"v2": "v2"})
        with pytest.raises(SessionClosed):
            mgr.set_variable(sid, "v_late", "x")

    def test_close_cancels_queued_request_and_index_entry(self):
        mgr = SemanticManager()
        sid = mgr.create_session("s")
        mgr.set_variable(sid, "v_in", "payload")
        # queued but never run: no run_until_idle between submit and close
        rid = mgr.submit(sid, "Use {{input:v_in}} {{output:v_o}}", {"v_in": "v_in", "v_o": "v_o"})
        assert mgr.sessions[sid].dag.requests[rid].status is RequestStatus.QUEUED
        mgr.close_session(sid)
        assert mgr.sessions[sid].dag.requests[rid].status is RequestStatus.CANCELLED
        assert mgr.index.live_owners() == []
        assert mgr.scheduler.entries == {}

    def test_session_id_rules(self):
        mgr = SemanticManager()
        sid = mgr.create_session("s")
        with pytest.raises(AlreadySet):
            mgr.create_session("s")
        auto = mgr.create_session()
        assert auto.startswith("s") and auto != sid
        with pytest.raises(UnknownSession):
            mgr.submit("ghost", "X {{output:v}}", {"v": "v"})

    def test_variables_are_session_scoped(self):
        mgr = SemanticManager()
        s1 = mgr.create_session("s1")
        s2 = mgr.create_session("s2")
        mgr.set_variable(s1, "v_shared", "mine")
        with pytest.raises(UnknownVariable):
            mgr.set_variable(s2, "v_shared", "theirs")
        with pytest.raises(UnknownVariable):
            mgr.submit(s2, "Use {{input:v_shared}} {{output:v_o}}", {"v_shared": "v_shared", "v_o": "v_o"})
        with pytest.raises(UnknownVariable):
            mgr.lookup_var("v_nowhere")


class TestVariableLifecycle:
    def test_on_var_terminal_fires_exactly_once(self):
        mgr = SemanticManager()
        sid = mgr.create_session("s")
        mgr.submit(sid, "Go {{input:v_i}} {{output:v_o}}", {"v_i": "v_i", "v_o": "v_o"}, script="ok")
        calls = []
        mgr.on_var_terminal("v_o", calls.append)
        mgr.set_variable(sid, "v_i", "start")
        mgr.run_until_idle()
        assert len(calls) == 1
        assert calls[0] == mgr.runtimes["r0"].completed_ns
        # late registration observes the terminal state immediately
        late = []
        mgr.on_var_terminal("v_o", late.append)
        assert late == [mgr.now_ns]

    def test_double_set_raises_and_keeps_value(self):
        mgr = SemanticManager()
        sid = mgr.create_session("s")
        mgr.set_variable(sid, "v_x", "first")
        with pytest.raises(AlreadySet):
            mgr.set_variable(sid, "v_x", "second")
        assert mgr.lookup_var("v_x").value == "first"

    def test_unbound_placeholder_rejected(self):
        mgr = SemanticManager()
        sid = mgr.create_session("s")
        with pytest.raises(MalformedBody):
            mgr.submit(sid, "Use {{input:a}} {{output:b}}", {"a": "v_a"})

    def test_duplicate_producer_and_cycles_surface_through_submit(self):
        mgr = SemanticManager()
        sid = mgr.create_session("s")
        mgr.submit(sid, "A {{output:out}}", {"out": "v_dup"})
        before = mgr.submit_count
        with pytest.raises(DuplicateProducer):
            mgr.submit(sid, "B {{output:out}}", {"out": "v_dup"})
        assert mgr.submit_count == before

        with pytest.raises(CycleDetected):
            mgr.submit(sid, "Loop {{input:x}} {{output:y}}", {"x": "v_self", "y": "v_self"})

        mgr.submit(sid, "F {{input:a}} {{output:b}}", {"a": "v_1", "b": "v_2"})
        with pytest.raises(CycleDetected):
            mgr.submit(sid, "G {{input:b}} {{output:a}}", {"b": "v_2", "a": "v_1"})


class TestScriptedOutput:
    def run_one(self, script, sampling):
        mgr = SemanticManager()
        sid = mgr.create_session("s")
        rid = mgr.submit(sid, "Say {{output:v}}", {"v": "v"}, sampling=sampling, script=script)
        mgr.run_until_idle()
        return mgr, rid, mgr.lookup_var("v")

    def test_stop_string_cuts_before_first_occurrence(self):
        mgr, rid, var = self.run_one("a b\nc", SamplingParams(max_tokens=16, stop="\n"))
        assert var.value == "a b"
        assert len(mgr.runtimes[rid].gen_token_ids) == 3  # "a", " ", "b"

    def test_max_tokens_truncates_on_token_boundary(self):
        mgr, rid, var = self.run_one("a b", SamplingParams(max_tokens=2))
        assert var.value == "a "
        assert len(mgr.runtimes[rid].gen_token_ids) == 2

    def test_zero_token_request_still_completes(self):
        mgr, rid, var = self.run_one("anything", SamplingParams(max_tokens=0))
        assert var.state is VarState.READY
        assert var.value == ""
        assert mgr.runtimes[rid].gen_token_ids == []
        assert mgr.runtimes[rid].completed_ns is not None


class TestPrefixReuse:
    CHAT = "{{input:conv}}{{input:msg}}{{output:ans}}"
    MSG1 = "hello there."
    ANS1 = "general kenobi."
    MSG2 = " you seem bold."

    def run_turns(self, prefix_reuse):
        mgr = SemanticManager(prefix_reuse=prefix_reuse)
        sid = mgr.create_session("s")
        mgr.set_variable(sid, "c1", "")
        mgr.set_variable(sid, "m1", self.MSG1)
        r1 = mgr.submit(
            sid, self.CHAT, {"conv": "c1", "msg": "m1", "ans": "a1"},
            sampling=SamplingParams(max_tokens=64), script=self.ANS1,
        )
        mgr.run_until_idle()
        assert mgr.lookup_var("a1").value == self.ANS1
        # the caller threads the transcript forward, exactly like a chat app
        mgr.set_variable(sid, "c2", self.MSG1 + self.ANS1)
        mgr.set_variable(sid, "m2", self.MSG2)
        r2 = mgr.submit(
            sid, self.CHAT, {"conv": "c2", "msg": "m2", "ans": "a2"},
            sampling=SamplingParams(max_tokens=64), script="so uncivilized.",
        )
        mgr.run_until_idle()
        return mgr, r1, r2

    def test_second_turn_reuses_transcript_tokens(self):
        mgr, r1, r2 = self.run_turns(prefix_reuse=True)
        tok = ReferenceTokenizer()
        transcript_tokens = len(tok.tokenize(self.MSG1 + self.ANS1))
        rt1, rt2 = mgr.runtimes[r1], mgr.runtimes[r2]
        assert rt1.reused_tokens == 0
        # turn 2 matches the grown turn-1 context (prompt + generated answer)
        assert rt2.reused_tokens == transcript_tokens
        assert rt2.prompt_tokens == transcript_tokens + len(tok.tokenize(self.MSG2))
        assert rt2.engine_id == rt1.engine_id

    def test_reuse_disabled_refills_everything(self):
        mgr, r1, r2 = self.run_turns(prefix_reuse=False)
        assert mgr.runtimes[r2].reused_tokens == 0
        assert mgr.index.live_owners() == []


class TestBlockingGet:
    def test_returns_immediately_when_terminal(self):
        mgr = SemanticManager()
        sid = mgr.create_session("s")
        mgr.set_variable(sid, "v_x", "done")
        var = mgr.get_blocking("v_x", Criterion.THROUGHPUT, sid, timeout_s=1.0)
        assert var.value == "done"

    def test_times_out_when_nothing_produces(self):
        mgr = SemanticManager()
        sid = mgr.create_session("s")
        mgr.submit(sid, "Use {{input:v_i}} {{output:v_o}}", {"v_i": "v_i", "v_o": "v_o"})
        with pytest.raises(GetTimeout):
            mgr.get_blocking("v_o", Criterion.LATENCY, sid, timeout_s=0.05)


class TestReporting:
    def test_dump_and_logs_cover_the_run(self):
        mgr = SemanticManager()
        sid = mgr.create_session("s")
        submit_pipeline(mgr, sid)
        mgr.get_variable("v_test", Criterion.LATENCY, sid)
        mgr.set_variable(sid, "v_task", "sorting")
        mgr.run_until_idle()

        dump = mgr.dump_dags().splitlines()
        assert len(dump) == 2
        assert dump[0].startswith("REQ r0 inputs=v_task output=v_code label=latency")
        assert dump[1].startswith("REQ r1 inputs=v_code output=v_test label=latency")

        log = mgr.scheduler_log()
        assert len(log) == 2
        assert all(" place req=" in line and " engine=e0 " in line for line in log)

        traces = mgr.engine_traces()
        assert set(traces) == {"e0"}
        assert all("engine=e0" in line for line in traces["e0"])
        assert any("fill=" in line and "fill=0" not in line for line in traces["e0"])
        assert any("emitted=1" in line for line in traces["e0"])

        peaks = mgr.peak_blocks()
        assert set(peaks) == {"e0"}
        assert peaks["e0"] > 0

    def test_multiple_engines_come_from_config(self):
        mgr = SemanticManager(config=Config(engines=3))
        assert sorted(mgr.engines) == ["e0", "e1", "e2"]
        assert set(mgr.peak_blocks()) == {"e0", "e1", "e2"}
