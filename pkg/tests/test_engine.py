"""Engine simulation: paged KV accounting, fills, decode batching, costs."""

import re

import pytest

from semflow.engine import CostModel, Engine, format_ms
from semflow.errors import ContextBusy, OutOfMemory, UnknownContext, UnknownParentContext
from semflow.tokenizer import hash_token_ids

import oracles


def fresh(kv_tokens=120_000, **cost_kw) -> Engine:
    return Engine("e0", CostModel(**cost_kw), kv_tokens=kv_tokens)


def test_cost_model_exact_values():
    cost = CostModel()
    assert cost.c0_ns == 2_000_000
    assert cost.c1_ns == 6_200
    assert cost.c2_ns == 5_000_000
    assert cost.c3_ns == 2_000
    assert cost.iteration_ns(1024) == 8_348_800
    assert cost.iteration_ns(6144) == 40_092_800
    assert cost.fill_ns(2000) == 9_000_000
    for batch in (0, 1, 777, 64_000):
        assert cost.iteration_ns(batch) == oracles.iteration_ns(batch)
        assert cost.fill_ns(batch) == oracles.fill_ns(batch)


def test_fill_allocates_ceil_blocks():
    eng = fresh()
    eng.fill([1] * 6000, "root", None, boundary_hash=11)
    assert eng.store.used_blocks == oracles.ceil_blocks(6000) == 375
    eng.fill([1] * 200, "kid_a", "root", boundary_hash=12)
    eng.fill([1] * 200, "kid_b", "root", boundary_hash=13)
    assert eng.store.used_blocks == 375 + 13 + 13
    assert eng.store.peak_used == 401
    assert eng.contexts["root"].refcount == 2  # two children hold it
    # the child chain extends the parent chain
    assert eng.contexts["kid_a"].chain_hashes == [11, 12]
    assert eng._chain_tokens(eng.contexts["kid_a"]) == 6200


def test_empty_fill_creates_block_free_context():
    eng = fresh()
    assert eng.fill([], "c0", None) == 0
    assert eng.contexts["c0"].token_count == 0
    assert eng.store.used_blocks == 0


def test_fill_oom_is_atomic():
    eng = fresh(kv_tokens=160)  # 10 blocks
    eng.fill([1] * 150, "c0", None, boundary_hash=5)
    used = eng.store.used_blocks
    with pytest.raises(OutOfMemory):
        eng.fill([1] * 32, "c1", "c0", boundary_hash=6)
    assert "c1" not in eng.contexts
    assert eng.store.used_blocks == used
    assert eng.contexts["c0"].refcount == 0  # the failed child let go
    assert 6 not in eng.registry
    # growing an existing context fails just as cleanly
    with pytest.raises(OutOfMemory):
        eng.fill([1] * 32, "c0", None)
    assert eng.contexts["c0"].token_count == 150


def test_unknown_context_errors():
    eng = fresh()
    with pytest.raises(UnknownContext):
        eng.get_context("nope")
    with pytest.raises(UnknownParentContext):
        eng.create_context("c1", "missing-parent")


def test_scripted_generation_runs_one_token_per_step():
    eng = fresh()
    eng.fill([1] * 100, "c0", None, request_id="r1", boundary_hash=3)
    eng.generate("r1", "c0", list(range(50)), "value text")
    assert not eng.gens["r1"].started  # fill still pending

    first = eng.step()
    assert first.fill_tokens == 100
    assert first.batch_tokens == 0
    assert first.fill_completed == ["r1"]
    assert first.elapsed_ns == oracles.fill_ns(100)

    decode_steps = 0
    while not eng.gens["r1"].done:
        report = eng.step()
        decode_steps += 1
        # batch counted before growth: prompt plus tokens emitted so far
        assert report.batch_tokens == 100 + (decode_steps - 1)
        assert report.elapsed_ns == oracles.iteration_ns(report.batch_tokens)
        assert report.emitted == {"r1": 1}
    assert decode_steps == 50
    assert eng.reports[-1].finished == ["r1"]
    assert eng.contexts["c0"].token_count == 150
    assert eng.total_emitted == 50
    assert eng.clock_ns == eng.busy_ns == eng.fill_ns_total + eng.decode_ns_total
    assert eng.fill_ns_total == oracles.fill_ns(100)
    assert eng.decode_ns_total == sum(oracles.iteration_ns(100 + k) for k in range(50))


def test_zero_token_generation_finishes_free():
    eng = fresh()
    eng.fill([1] * 8, "c0", None)
    eng.step()  # drain the setup fill
    eng.generate("r1", "c0", [], "")
    report = eng.step()
    assert report.finished == ["r1"]
    assert report.elapsed_ns == 0
    assert report.batch_tokens == 0 and report.fill_tokens == 0
    assert eng.finish_generation("r1") is None  # nothing to register
    assert eng.contexts["c0"].refcount == 0


def test_finish_generation_registers_end_hash():
    eng = fresh()
    eng.fill([1] * 10, "c0", None, request_id="r1", boundary_hash=42)
    gen_tokens = [7, 8, 9]
    eng.generate("r1", "c0", gen_tokens, "xyz")
    while eng.has_work():
        eng.step()
    end = eng.finish_generation("r1")
    assert end == oracles.fnv64_ids(gen_tokens, seed=42)
    assert end == hash_token_ids(gen_tokens, seed=42)
    assert eng.registry[end] == "c0"
    assert eng.contexts["c0"].chain_hashes == [42, end]
    assert eng.contexts["c0"].refcount == 0
    assert "r1" not in eng.charges and "r1" not in eng.holder_class
    # a later prompt matching through the generated value reuses the context
    plan = eng.plan_prefix([42, end], [[1] * 10, gen_tokens])
    assert plan.reuse_context_id == "c0"
    assert plan.marginal_tokens == 0


def test_refcounts_guard_frees():
    eng = fresh()
    eng.fill([1] * 20, "c0", None)
    eng.fill([1] * 4, "c1", "c0")
    with pytest.raises(ContextBusy):
        eng.free_context("c0")
    eng.free_context("c1")
    eng.free_context("c0")  # child gone, parent freeable
    assert eng.contexts == {}
    assert eng.store.used_blocks == 0


def test_mark_dropped_cascades_through_parents():
    eng = fresh()
    eng.fill([1] * 20, "c0", None)
    eng.fill([1] * 4, "c1", "c0")
    eng.mark_dropped("c0")
    assert "c0" in eng.contexts  # still held by the child
    eng.mark_dropped("c1")
    assert eng.contexts == {}
    assert eng.store.used_blocks == 0


def test_cancel_request_releases_the_leaf():
    eng = fresh()
    eng.fill([1] * 20, "c0", None, request_id="r1", boundary_hash=1)
    eng.generate("r1", "c0", [5, 5], "aa")
    eng.cancel_request("r1")
    assert "r1" not in eng.gens
    assert eng.contexts == {}  # dropped at refcount zero
    assert not eng.fill_queue
    assert eng.pending_fills.get("r1") is None


def test_shared_kernel_deduplicates_shared_ancestors():
    def run(shared: bool):
        eng = Engine("e0", CostModel(shared_kernel=shared))
        eng.fill([1] * 1000, "root", None, boundary_hash=9)
        eng.step()  # drain the fill so decode steps are pure
        eng.create_context("a", "root")
        eng.create_context("b", "root")
        eng.generate("ra", "a", [1] * 5, "v")
        eng.generate("rb", "b", [1] * 5, "v")
        reports = []
        while any(not g.done for g in eng.gens.values()):
            reports.append(eng.step())
        return reports

    on = run(True)
    off = run(False)
    assert len(on) == len(off) == 5
    for k, (a, b) in enumerate(zip(on, off)):
        assert a.batch_tokens == 1000 + 2 * k
        assert b.batch_tokens == 2000 + 2 * k
        assert b.batch_tokens - a.batch_tokens == 1000
        assert b.elapsed_ns - a.elapsed_ns == 6_200 * 1000  # c1 per shared token


def test_fill_joins_decode_next_step():
    eng = fresh()
    eng.fill([1] * 30, "c0", None, request_id="r1", boundary_hash=2)
    eng.generate("r1", "c0", [1, 1], "xx")
    eng.fill([1] * 10, "c1", None, request_id="r2", boundary_hash=4)
    eng.generate("r2", "c1", [1], "x")
    # one fill chunk per step, FIFO
    r1_fill = eng.step()
    assert (r1_fill.fill_tokens, r1_fill.batch_tokens) == (30, 0)
    r2_fill = eng.step()
    assert r2_fill.fill_tokens == 10
    assert r2_fill.batch_tokens == 30  # r1 decodes while r2 fills
    assert r2_fill.emitted == {"r1": 1}
    both = eng.step()
    assert both.batch_tokens == 31 + 10
    assert both.emitted == {"r1": 1, "r2": 1}


def test_decode_oom_fails_the_generation():
    eng = fresh(kv_tokens=160)  # 10 blocks
    eng.fill([1] * 160, "c0", None, request_id="r1")
    eng.generate("r1", "c0", [1, 1], "xx")
    eng.step()  # fill
    report = eng.step()
    assert report.failed and report.failed[0][0] == "r1"
    assert eng.gens["r1"].done
    assert eng.contexts["c0"].token_count == 160  # grow failed atomically


def test_trace_line_format_and_determinism():
    pattern = re.compile(r"^t=\d+(\.\d+)? engine=e0 fill=\d+ batch=\d+ emitted=\d+$")

    def run():
        eng = fresh()
        eng.fill([1] * 64, "c0", None, request_id="r1", boundary_hash=8)
        eng.generate("r1", "c0", [2] * 3, "abc")
        while eng.has_work():
            eng.step()
        return eng

    a, b = run(), run()
    assert a.trace == b.trace
    assert [r.elapsed_ns for r in a.reports] == [r.elapsed_ns for r in b.reports]
    for line in a.trace:
        assert pattern.match(line), line
    assert a.trace[0] == "t=%s engine=e0 fill=64 batch=0 emitted=0" % format_ms(
        oracles.fill_ns(64)
    )


def test_has_work_and_idle_step():
    eng = fresh()
    assert not eng.has_work()
    assert eng.step() is None
    assert eng.trace == [] and eng.clock_ns == 0


def test_charged_tokens_and_classes():
    eng = fresh()
    eng.charges["r1"] = 700
    eng.charges["r2"] = 41
    eng.holder_class["r1"] = "latency"
    eng.holder_class["r2"] = "throughput"
    assert eng.charged_tokens == 741
    assert eng.admitted_classes() == ["latency", "throughput"]


def test_format_ms():
    assert format_ms(0) == "0"
    assert format_ms(2_000_000) == "2"
    assert format_ms(2_500_000) == "2.5"
    assert format_ms(8_348_800) == "8.349"
    assert format_ms(40_092_800) == "40.093"
    assert format_ms(1_000) == "0.001"


def test_block_conservation_property():
    assert oracles.run_block_conservation_cases(600, seed=909) == 600
