"""Experiment harness: run a workload under a policy mode, collect metrics.

A policy mode bundles the knobs the comparisons flip together:

  request-centric    client drives each request over an RTT, inputs rendered
                     client side, everything latency class, no reuse
  throughput-centric server-side chaining, full-capacity batching, no reuse
  latency-centric    server-side chaining, small-batch latency bound, no reuse
  semflow            chaining, deduced labels, task groups, prefix sharing

Within one process a run is fully determined by (workload, mode, config):
the same call sequence hits the same virtual-time event order every time.
"""

from __future__ import annotations

import json
import random
import statistics
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

from .config import Config
from .dag import RequestStatus, SamplingParams, SchedulingLabel
from .errors import InvalidSpec, SpecMismatch
from .manager import SemanticManager
from .prompting import (
    ConstantText,
    Criterion,
    Direction,
    Placeholder,
    parse_prompt_template,
)
from .scheduler import SchedulerConfig
from .workloads import (
    AppProgram,
    GetOp,
    SetVarOp,
    SubmitOp,
    ThinkOp,
    Workload,
)

MS = 1_000_000


@dataclass(frozen=True)
class PolicyConfig:
    name: str
    client_rtt: bool
    server_chaining: bool
    prefix_affinity: bool
    prefix_sharing: bool
    task_groups: bool
    force_label: Optional[SchedulingLabel]


POLICIES: Dict[str, PolicyConfig] = {
    "request-centric": PolicyConfig(
        "request-centric", True, False, False, False, False, SchedulingLabel.LATENCY_SENSITIVE
    ),
    "throughput-centric": PolicyConfig(
        "throughput-centric", False, True, False, False, False, SchedulingLabel.THROUGHPUT_PREFERRED
    ),
    "latency-centric": PolicyConfig(
        "latency-centric", False, True, False, False, False, SchedulingLabel.LATENCY_SENSITIVE
    ),
    "semflow": PolicyConfig("semflow", False, True, True, True, True, None),
}

_MODE_ALIASES = {
    "request": "request-centric",
    "rc": "request-centric",
    "throughput": "throughput-centric",
    "tc": "throughput-centric",
    "latency": "latency-centric",
    "lc": "latency-centric",
    "full": "semflow",
}


def resolve_mode(mode: str) -> PolicyConfig:
    key = _MODE_ALIASES.get(mode, mode)
    policy = POLICIES.get(key)
    if policy is None:
        raise InvalidSpec(f"unknown policy mode {mode!r}")
    return policy


_CRITERIA = {"latency": Criterion.LATENCY, "throughput": Criterion.THROUGHPUT}


class _AppRunner:
    """Drives one app program against the manager.

    Chaining policies fire every op up front; the request DAG carries the
    dependencies. Without chaining (or for interactive apps) ops run
    sequentially, each submit waiting for its output, with the optional
    client RTT charged before every submit.
    """

    def __init__(
        self,
        mgr: SemanticManager,
        app: AppProgram,
        policy: PolicyConfig,
        rtt_ns: Callable[[], int],
    ):
        self.mgr = mgr
        self.app = app
        self.policy = policy
        self.rtt_ns = rtt_ns
        self.session_id = mgr.create_session(f"sess-{app.app_id}")
        self.values: Dict[str, str] = {}
        self.sequential = not policy.server_chaining or app.interactive
        self.op_idx = 0
        self.done_ns: Optional[int] = None
        self._awaiting = 0
        self._await_done = 0
        # criteria to attach at submit time, as a real client's get would
        self._criteria = {
            op.name: _CRITERIA[op.criterion]
            for op in app.ops
            if isinstance(op, GetOp) and op.criterion in _CRITERIA
        }

    def var_id(self, name: str) -> str:
        return f"{self.session_id}:{name}"

    def start(self) -> None:
        if self.sequential:
            self.mgr.schedule_at(self.app.start_ns, self._step)
        else:
            self.mgr.schedule_at(self.app.start_ns, self._run_all)

    # -- chained execution ------------------------------------------------

    def _run_all(self, now: int) -> None:
        awaited: List[str] = []
        for op in self.app.ops:
            if isinstance(op, SetVarOp):
                self.mgr.set_variable(self.session_id, self.var_id(op.name), op.value, op.name)
            elif isinstance(op, SubmitOp):
                self._submit_bound(op)
            elif isinstance(op, GetOp):
                self.mgr.get_variable(
                    self.var_id(op.name), _CRITERIA[op.criterion], self.session_id
                )
                awaited.append(self.var_id(op.name))
            # ThinkOps only pace interactive apps
        if not awaited:
            self.done_ns = now
            return
        self._awaiting = len(awaited)

        def on_done(t: int) -> None:
            self._await_done += 1
            if self._await_done == self._awaiting:
                self.done_ns = t

        for vid in awaited:
            self.mgr.on_var_terminal(vid, on_done)

    def _submit_bound(self, op: SubmitOp) -> str:
        template = parse_prompt_template(op.prompt)
        bindings = {ph.name: self.var_id(ph.name) for ph in template.placeholders()}
        rid = self.mgr.submit(
            self.session_id,
            op.prompt,
            bindings,
            SamplingParams(max_tokens=op.max_tokens, stop=op.stop),
            script=op.script,
            template=template,
        )
        crit = self._criteria.get(op.out_name)
        if crit is not None:
            self.mgr.get_variable(self.var_id(op.out_name), crit, self.session_id)
        return rid

    # -- sequential execution ----------------------------------------------

    def _step(self, now: int) -> None:
        while self.op_idx < len(self.app.ops):
            op = self.app.ops[self.op_idx]
            self.op_idx += 1
            if isinstance(op, SetVarOp):
                self.values[op.name] = op.value
                if self.policy.server_chaining:
                    self.mgr.set_variable(self.session_id, self.var_id(op.name), op.value, op.name)
                continue
            if isinstance(op, GetOp):
                self.mgr.get_variable(
                    self.var_id(op.name), _CRITERIA[op.criterion], self.session_id
                )
                continue
            if isinstance(op, ThinkOp):
                self.mgr.schedule_after(op.delay_ns, self._step)
                return
            self._run_submit(op)
            return
        self.done_ns = now

    def _run_submit(self, op: SubmitOp) -> None:
        def fire(_: int) -> None:
            if self.policy.server_chaining:
                self._submit_bound(op)
            else:
                self._submit_inline(op)
            out_vid = self.var_id(op.out_name)

            def resume(t: int) -> None:
                var = self.mgr.lookup_var(out_vid)
                self.values[op.out_name] = var.value or ""
                self._step(t)

            self.mgr.on_var_terminal(out_vid, resume)

        if self.policy.client_rtt:
            self.mgr.schedule_after(self.rtt_ns(), fire)
        else:
            fire(self.mgr.now_ns)

    def _submit_inline(self, op: SubmitOp) -> str:
        """Render input values into the prompt client side; the server sees a
        pure output template with no dependency information."""
        template = parse_prompt_template(op.prompt)
        parts: List[str] = []
        for seg in template.segments:
            if isinstance(seg, ConstantText):
                parts.append(seg.text)
            elif seg.direction is Direction.INPUT:
                if seg.name not in self.values:
                    raise InvalidSpec(
                        f"app {self.app.app_id}: input {seg.name} unavailable client side"
                    )
                parts.append(self.values[seg.name])
            else:
                parts.append(f"{{{{output:{seg.name}}}}}")
        prompt = "".join(parts)
        rid = self.mgr.submit(
            self.session_id,
            prompt,
            {op.out_name: self.var_id(op.out_name)},
            SamplingParams(max_tokens=op.max_tokens, stop=op.stop),
            script=op.script,
        )
        crit = self._criteria.get(op.out_name)
        if crit is not None:
            self.mgr.get_variable(self.var_id(op.out_name), crit, self.session_id)
        return rid


def _p90(values: List[float]) -> float:
    if not values:
        return 0.0
    ordered = sorted(values)
    idx = max(0, -(-9 * len(ordered) // 10) - 1)
    return ordered[idx]


def run_workload_manager(
    workload: Workload,
    mode: str,
    config: Optional[Config] = None,
) -> Tuple[SemanticManager, List[_AppRunner], int]:
    """Run the workload to completion; return the live manager for callers
    that need engine internals (step reports, contexts, the prefix index)."""
    policy = resolve_mode(mode)
    cfg = config or Config()
    sched_cfg = SchedulerConfig(
        latency_capacity=cfg.latency_capacity,
        throughput_capacity=cfg.throughput_capacity,
        use_task_groups=policy.task_groups,
        prefix_affinity=policy.prefix_affinity,
    )
    mgr = SemanticManager(
        cfg,
        sched_cfg,
        force_label=policy.force_label,
        prefix_reuse=policy.prefix_sharing,
    )
    rtt_rng = random.Random(workload.seed ^ 0x7177)
    lo_ms, hi_ms = workload.rtt_ms
    if not (0 <= lo_ms <= hi_ms):
        raise InvalidSpec(f"bad rtt range {workload.rtt_ms}")

    def draw_rtt() -> int:
        return int(rtt_rng.uniform(lo_ms, hi_ms) * MS)

    runners = [_AppRunner(mgr, app, policy, draw_rtt) for app in workload.apps]
    for r in runners:
        r.start()
    end_ns = mgr.run_until_idle()
    return mgr, runners, end_ns


def run_experiment(
    workload: Workload,
    mode: str,
    config: Optional[Config] = None,
) -> Dict[str, object]:
    """Run every app of the workload under the mode; return the metrics
    report as a JSON-ready dict."""
    mgr, runners, end_ns = run_workload_manager(workload, mode, config)
    return _build_report(workload, resolve_mode(mode), mgr.config, mgr, runners, end_ns)


def _build_report(
    workload: Workload,
    policy: PolicyConfig,
    cfg: Config,
    mgr: SemanticManager,
    runners: List[_AppRunner],
    end_ns: int,
) -> Dict[str, object]:
    app_by_session = {r.session_id: r.app for r in runners}
    apps: Dict[str, Dict[str, object]] = {}
    for r in runners:
        done_ns = r.done_ns if r.done_ns is not None else end_ns
        apps[r.app.app_id] = {
            "kind": r.app.kind,
            "start_ms": r.app.start_ns / MS,
            "done_ms": done_ns / MS,
            "e2e_ms": (done_ns - r.app.start_ns) / MS,
        }

    requests: List[Dict[str, object]] = []
    scripted_total = 0
    statuses: Dict[str, int] = {}
    for rid in sorted(mgr.runtimes, key=lambda r: int(r[1:])):
        rt = mgr.runtimes[rid]
        sess = mgr.sessions[rt.session_id]
        request = sess.dag.requests[rid]
        app = app_by_session.get(rt.session_id)
        status = request.status.value
        statuses[status] = statuses.get(status, 0) + 1
        out_tokens = len(rt.gen_token_ids)
        if request.status is RequestStatus.DONE:
            scripted_total += out_tokens
        row: Dict[str, object] = {
            "request_id": rid,
            "app_id": app.app_id if app else "",
            "kind": app.kind if app else "",
            "status": status,
            "engine": rt.engine_id or "",
            "arrival_ms": rt.arrival_ns / MS,
            "queued_ms": rt.queued_ns / MS if rt.queued_ns is not None else None,
            "placed_ms": rt.placed_ns / MS if rt.placed_ns is not None else None,
            "done_ms": rt.completed_ns / MS if rt.completed_ns is not None else None,
            "prompt_tokens": rt.prompt_tokens,
            "reused_tokens": rt.reused_tokens,
            "output_tokens": out_tokens,
            "label": request.label.value,
        }
        if rt.completed_ns is not None:
            e2e = (rt.completed_ns - rt.arrival_ns) / MS
            row["e2e_ms"] = e2e
            row["norm_latency_ms_per_token"] = e2e / out_tokens if out_tokens else None
        requests.append(row)

    kinds: Dict[str, Dict[str, object]] = {}
    for kind in sorted({a["kind"] for a in apps.values()}):
        kind_apps = [a for a in apps.values() if a["kind"] == kind]
        e2es = [a["e2e_ms"] for a in kind_apps]
        norms = [
            r["norm_latency_ms_per_token"]
            for r in requests
            if r["kind"] == kind and r.get("norm_latency_ms_per_token") is not None
        ]
        kinds[kind] = {
            "apps": len(kind_apps),
            "e2e_mean_ms": statistics.fmean(e2es) if e2es else 0.0,
            "e2e_p90_ms": _p90(e2es),
            "makespan_ms": max(a["done_ms"] for a in kind_apps) - min(a["start_ms"] for a in kind_apps),
            "norm_latency_ms_per_token": statistics.fmean(norms) if norms else None,
        }

    emitted_total = sum(e.total_emitted for e in mgr.engines.values())
    decode_ns = sum(e.decode_ns_total for e in mgr.engines.values())
    all_e2e = [a["e2e_ms"] for a in apps.values()]
    duration_ms = end_ns / MS
    engines: Dict[str, Dict[str, object]] = {}
    for eid in sorted(mgr.engines):
        e = mgr.engines[eid]
        engines[eid] = {
            "steps": len(e.reports),
            "busy_ms": e.busy_ns / MS,
            "fill_ms": e.fill_ns_total / MS,
            "decode_ms": e.decode_ns_total / MS,
            "emitted_tokens": e.total_emitted,
            "peak_blocks": e.store.peak_used,
            "utilization": (e.busy_ns / end_ns) if end_ns else 0.0,
        }

    aggregates: Dict[str, object] = {
        "e2e_mean_ms": statistics.fmean(all_e2e) if all_e2e else 0.0,
        "e2e_p90_ms": _p90(all_e2e),
        "makespan_ms": duration_ms,
        "decode_ms_per_token": (decode_ns / MS / emitted_total) if emitted_total else 0.0,
        "emitted_tokens": emitted_total,
        "scripted_tokens": scripted_total,
        "peak_blocks_total": sum(e.store.peak_used for e in mgr.engines.values()),
        "requests_done": statuses.get("done", 0),
        "requests_failed": statuses.get("failed", 0) + statuses.get("cancelled", 0),
        "sustained_rps": (statuses.get("done", 0) / (duration_ms / 1000.0)) if duration_ms else 0.0,
    }

    return {
        "version": 1,
        "workload": workload.name,
        "params": dict(workload.params),
        "seed": workload.seed,
        "mode": policy.name,
        "config": cfg.to_dict(),
        "duration_ms": duration_ms,
        "apps": apps,
        "kinds": kinds,
        "requests": requests,
        "engines": engines,
        "aggregates": aggregates,
        "scheduler_log": mgr.scheduler_log(),
        "engine_traces": mgr.engine_traces(),
    }


_COMPARED_METRICS = (
    "e2e_mean_ms",
    "e2e_p90_ms",
    "makespan_ms",
    "decode_ms_per_token",
    "peak_blocks_total",
    "emitted_tokens",
)


def compare_reports(a: Dict[str, object], b: Dict[str, object]) -> Dict[str, object]:
    """Metric-by-metric ratio table for two runs of the same workload.

    Both reports must describe the same workload, parameters, seed, and
    engine config; only the policy mode may differ.
    """
    for key in ("workload", "params", "seed", "config"):
        if a.get(key) != b.get(key):
            raise SpecMismatch(f"reports disagree on {key}: {a.get(key)!r} vs {b.get(key)!r}")
    rows = []
    agg_a = a["aggregates"]
    agg_b = b["aggregates"]
    for metric in _COMPARED_METRICS:
        va = float(agg_a.get(metric) or 0.0)
        vb = float(agg_b.get(metric) or 0.0)
        rows.append(
            {
                "metric": metric,
                "a": va,
                "b": vb,
                "ratio_a_over_b": (va / vb) if vb else None,
            }
        )
    return {
        "workload": a["workload"],
        "seed": a["seed"],
        "mode_a": a["mode"],
        "mode_b": b["mode"],
        "metrics": rows,
    }


def format_comparison(cmp: Dict[str, object]) -> str:
    lines = [
        f"workload={cmp['workload']} seed={cmp['seed']} a={cmp['mode_a']} b={cmp['mode_b']}",
        f"{'metric':<24} {'a':>14} {'b':>14} {'a/b':>8}",
    ]
    for row in cmp["metrics"]:
        ratio = row["ratio_a_over_b"]
        lines.append(
            f"{row['metric']:<24} {row['a']:>14.4f} {row['b']:>14.4f} "
            f"{ratio:>8.3f}" if ratio is not None else
            f"{row['metric']:<24} {row['a']:>14.4f} {row['b']:>14.4f} {'-':>8}"
        )
    return "\n".join(lines)


def format_report_summary(report: Dict[str, object]) -> str:
    agg = report["aggregates"]
    lines = [
        f"workload={report['workload']} mode={report['mode']} seed={report['seed']}",
        f"{'apps':<20} {len(report['apps']):>12}",
        f"{'requests done':<20} {agg['requests_done']:>12}",
        f"{'requests failed':<20} {agg['requests_failed']:>12}",
        f"{'e2e mean ms':<20} {agg['e2e_mean_ms']:>12.3f}",
        f"{'e2e p90 ms':<20} {agg['e2e_p90_ms']:>12.3f}",
        f"{'makespan ms':<20} {agg['makespan_ms']:>12.3f}",
        f"{'decode ms/token':<20} {agg['decode_ms_per_token']:>12.4f}",
        f"{'emitted tokens':<20} {agg['emitted_tokens']:>12}",
        f"{'peak blocks':<20} {agg['peak_blocks_total']:>12}",
    ]
    for eid, stats in report["engines"].items():
        lines.append(
            f"engine {eid:<13} steps={stats['steps']:<6} util={stats['utilization']:.3f} "
            f"peak_blocks={stats['peak_blocks']}"
        )
    return "\n".join(lines)


def requests_csv(report: Dict[str, object]) -> str:
    cols = [
        "request_id", "app_id", "kind", "status", "engine", "label",
        "arrival_ms", "queued_ms", "placed_ms", "done_ms",
        "prompt_tokens", "reused_tokens", "output_tokens",
        "e2e_ms", "norm_latency_ms_per_token",
    ]
    out = [",".join(cols)]
    for row in report["requests"]:
        cells = []
        for c in cols:
            v = row.get(c)
            cells.append("" if v is None else str(v))
        out.append(",".join(cells))
    return "\n".join(out) + "\n"


def save_report(report: Dict[str, object], path: str) -> None:
    with open(path, "w") as f:
        json.dump(report, f, indent=1, sort_keys=False)
        f.write("\n")


def load_report(path: str) -> Dict[str, object]:
    with open(path) as f:
        report = json.load(f)
    if not isinstance(report, dict) or report.get("version") != 1:
        raise SpecMismatch(f"{path} is not a version-1 run report")
    return report
