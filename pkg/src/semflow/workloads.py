"""Synthetic workload catalog.

Each workload is a list of app programs: ordered set/submit/get ops with
scripted outputs and exact token counts, fully determined by the seed. Text
content never affects timing, only token counts do, so documents come from a
seeded word sampler with an exact-count construction: K words joined by
single spaces yield 2K-1 tokens and a trailing period rounds that to 2K.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple, Union

from .errors import InvalidSpec

MS = 1_000_000

_LEXICON = (
    "system report value market stream order model basic window filter "
    "branch detail butter copper stable sample circuit method period "
    "signal tensor dollar metric region policy outlook anchor bottle candle "
    "damage engine fabric garden hammer insect jacket kernel ladder magnet"
).split()


def synth_text(rng: random.Random, tokens: int) -> str:
    """Text with exactly `tokens` tokenizer pieces (words, spaces, periods)."""
    if tokens <= 0:
        return ""
    if tokens == 1:
        return rng.choice(_LEXICON)
    if tokens % 2:
        words = (tokens + 1) // 2
        return " ".join(rng.choice(_LEXICON) for _ in range(words))
    words = tokens // 2
    return " ".join(rng.choice(_LEXICON) for _ in range(words)) + "."


@dataclass
class SetVarOp:
    name: str
    value: str


@dataclass
class SubmitOp:
    prompt: str
    out_name: str
    max_tokens: int
    script: str
    out_transform: str = ""
    stop: Optional[str] = None


@dataclass
class GetOp:
    name: str
    criterion: str  # "latency" | "throughput"


@dataclass
class ThinkOp:
    delay_ns: int


Op = Union[SetVarOp, SubmitOp, GetOp, ThinkOp]


@dataclass
class AppProgram:
    app_id: str
    kind: str
    start_ns: int
    ops: List[Op]
    interactive: bool = False  # run ops sequentially in every policy mode


@dataclass
class Workload:
    name: str
    seed: int
    params: Dict[str, object]
    apps: List[AppProgram]
    rtt_ms: Tuple[float, float] = (200.0, 300.0)


def chain_summary(
    seed: int,
    chunks: int = 10,
    chunk_size: int = 2000,
    output_len: int = 50,
    background: int = 0,
    background_prompt: int = 2400,
    background_output: int = 500,
    rtt_ms: Tuple[float, float] = (250.0, 250.0),
) -> Workload:
    """Incremental summarization: step k folds chunk k into summary k-1.

    The input placeholder leads each prompt so client-side and server-side
    rendering produce the same single fill segment.
    """
    if chunks < 1:
        raise InvalidSpec("chain_summary needs at least one chunk")
    rng = random.Random(seed)
    ops: List[Op] = [SetVarOp("s0", synth_text(rng, output_len))]
    for k in range(1, chunks + 1):
        chunk = synth_text(rng, chunk_size)
        prompt = (
            f"{{{{input:s{k - 1}}}}}\n"
            f"Fold section {k} of the report into the summary above.\n"
            f"{chunk}\n"
            f"Revised summary: {{{{output:s{k}}}}}"
        )
        ops.append(SubmitOp(prompt, f"s{k}", output_len, synth_text(rng, output_len)))
    ops.append(GetOp(f"s{chunks}", "latency"))
    apps = [AppProgram("chain0", "chain", 0, ops)]
    for b in range(background):
        brng = random.Random((seed << 8) ^ (b + 1))
        bops: List[Op] = [
            SetVarOp("q", synth_text(brng, background_prompt)),
            SubmitOp(
                "{{input:q}}\nAnswer at length: {{output:a}}",
                "a",
                background_output,
                synth_text(brng, background_output),
            ),
            GetOp("a", "latency"),
        ]
        apps.append(AppProgram(f"bg{b}", "background", 1 * MS, bops))
    return Workload(
        "ChainSummary",
        seed,
        {
            "chunks": chunks,
            "chunk_size": chunk_size,
            "output_len": output_len,
            "background": background,
        },
        apps,
        rtt_ms,
    )


def mapreduce_summary(
    seed: int,
    maps: int = 8,
    chunk_size: int = 2000,
    output_len: int = 50,
    rtt_ms: Tuple[float, float] = (250.0, 250.0),
    app_index: int = 0,
    start_ns: int = 0,
    rubric_len: int = 0,
) -> Workload:
    if maps < 1:
        raise InvalidSpec("mapreduce_summary needs at least one map")
    rng = random.Random(seed)
    # a shared grading rubric ahead of every map prompt; drawn only when
    # requested so rubric_len=0 leaves the rng stream untouched. The header
    # drops the part number then: the leading constant has to be identical
    # across maps for them to share one rubric context.
    rubric = f"Rubric:\n{synth_text(rng, rubric_len)}\n" if rubric_len else ""
    ops: List[Op] = []
    for k in range(maps):
        ops.append(SetVarOp(f"c{k}", synth_text(rng, chunk_size)))
    for k in range(maps):
        header = "Summarize the next part of the report." if rubric else f"Summarize part {k} of the report."
        prompt = (
            f"{rubric}{header}\n"
            f"{{{{input:c{k}}}}}\n"
            f"Part summary: {{{{output:m{k}}}}}"
        )
        ops.append(SubmitOp(prompt, f"m{k}", output_len, synth_text(rng, output_len)))
    joins = "\n".join(f"{{{{input:m{k}}}}}" for k in range(maps))
    ops.append(
        SubmitOp(
            f"Combine the part summaries into one.\n{joins}\nFinal summary: {{{{output:final}}}}",
            "final",
            output_len,
            synth_text(rng, output_len),
        )
    )
    ops.append(GetOp("final", "latency"))
    app = AppProgram(f"mr{app_index}", "mapreduce", start_ns, ops)
    return Workload(
        "MapReduceSummary",
        seed,
        {"maps": maps, "chunk_size": chunk_size, "output_len": output_len},
        [app],
        rtt_ms,
    )


def shared_prompt_serving(
    seed: int,
    users: int = 64,
    system_prompt_len: int = 6000,
    unique_len: int = 200,
    output_len: int = 200,
) -> Workload:
    """One long system prompt shared verbatim by every user request."""
    rng = random.Random(seed)
    system_prompt = synth_text(rng, system_prompt_len)
    apps: List[AppProgram] = []
    for u in range(users):
        urng = random.Random((seed << 8) ^ u)
        ops: List[Op] = [
            SetVarOp("q", synth_text(urng, unique_len)),
            SubmitOp(
                system_prompt + "{{input:q}}{{output:a}}",
                "a",
                output_len,
                synth_text(urng, output_len),
            ),
            GetOp("a", "throughput"),
        ]
        apps.append(AppProgram(f"user{u}", "shared", 0, ops))
    return Workload(
        "SharedPromptServing",
        seed,
        {
            "users": users,
            "system_prompt_len": system_prompt_len,
            "unique_len": unique_len,
            "output_len": output_len,
        },
        apps,
    )


def multi_agent_rounds(
    seed: int,
    files: int = 4,
    review_rounds: int = 3,
    design_len: int = 300,
    code_len: int = 250,
    review_len: int = 120,
) -> Workload:
    """Architect -> per-file coders -> iterated reviewer/reviser rounds."""
    rng = random.Random(seed)
    ops: List[Op] = [SetVarOp("task", synth_text(rng, 40))]
    ops.append(
        SubmitOp(
            "Design the module layout for this task.\n{{input:task}}\nDesign: {{output:design}}",
            "design",
            design_len,
            synth_text(rng, design_len),
        )
    )
    finals = []
    for f in range(files):
        prev = f"code_{f}_0"
        ops.append(
            SubmitOp(
                f"Write file {f} following the design.\n"
                f"{{{{input:design}}}}\nCode: {{{{output:{prev}}}}}",
                prev,
                code_len,
                synth_text(rng, code_len),
            )
        )
        for r in range(1, review_rounds + 1):
            review = f"review_{f}_{r}"
            ops.append(
                SubmitOp(
                    f"Review revision {r - 1} of file {f}.\n"
                    f"{{{{input:{prev}}}}}\nReview: {{{{output:{review}}}}}",
                    review,
                    review_len,
                    synth_text(rng, review_len),
                )
            )
            revised = f"code_{f}_{r}"
            ops.append(
                SubmitOp(
                    f"Revise file {f} per the review.\n"
                    f"{{{{input:{review}}}}}\nRevision: {{{{output:{revised}}}}}",
                    revised,
                    code_len,
                    synth_text(rng, code_len),
                )
            )
            prev = revised
        finals.append(prev)
    for name in finals:
        ops.append(GetOp(name, "throughput"))
    return Workload(
        "MultiAgentRounds",
        seed,
        {"files": files, "review_rounds": review_rounds},
        [AppProgram("agents0", "agents", 0, ops)],
    )


def chat_stream(
    seed: int,
    chats: int = 4,
    turns: int = 4,
    message_len: int = 40,
    output_len: int = 100,
    arrival_rate: float = 1.0,
    think_ms: Tuple[float, float] = (400.0, 900.0),
    start_ns: int = 0,
) -> Workload:
    """Interactive conversations; turn k extends the full prior transcript.

    The transcript and the new message are separate placeholders so the
    transcript boundary hash lines up with the previous turn's context.
    output_len should stay even: the synthesized answers then end with a
    period and the answer-to-message seam never merges tokens.
    """
    apps: List[AppProgram] = []
    arrivals_rng = random.Random(seed ^ 0x5EED)
    t = start_ns
    for c in range(chats):
        crng = random.Random((seed << 8) ^ c)
        ops: List[Op] = []
        transcript = ""
        for k in range(turns):
            msg = f"User: {synth_text(crng, message_len)}\nAssistant: "
            answer = synth_text(crng, output_len)
            ops.append(SetVarOp(f"conv{k}", transcript))
            ops.append(SetVarOp(f"msg{k}", msg))
            ops.append(
                SubmitOp(
                    f"{{{{input:conv{k}}}}}{{{{input:msg{k}}}}}{{{{output:a{k}}}}}",
                    f"a{k}",
                    output_len,
                    answer,
                )
            )
            ops.append(GetOp(f"a{k}", "latency"))
            # the next turn's transcript must be byte-identical to this
            # turn's context content, so nothing is appended beyond the
            # answer; even output_len keeps the answer/message seam clean
            transcript += msg + answer
            if k < turns - 1:
                think = crng.uniform(*think_ms)
                ops.append(ThinkOp(int(think * MS)))
        apps.append(AppProgram(f"chat{c}", "chat", t, ops, interactive=True))
        if arrival_rate > 0:
            t += int(arrivals_rng.expovariate(arrival_rate) * 1e9)
    return Workload(
        "ChatStream",
        seed,
        {"chats": chats, "turns": turns, "output_len": output_len},
        apps,
    )


def mixed(
    seed: int,
    chats: int = 8,
    chat_turns: int = 6,
    chat_message: int = 60,
    chat_output: int = 150,
    mapreduces: int = 6,
    maps: int = 8,
    map_chunk: int = 1000,
    map_output: int = 50,
    mr_start_ms: float = 3000.0,
    map_rubric: int = 3000,
) -> Workload:
    """Latency-sensitive chats alongside throughput map-reduce jobs.

    The map-reduce apps arrive once the conversations have grown, so their
    prompts compete with established chat residents for engine admission.
    Map prompts carry a long shared rubric: summarization jobs that restate
    their instructions ahead of every chunk.
    """
    chat_wl = chat_stream(
        seed,
        chats=chats,
        turns=chat_turns,
        message_len=chat_message,
        output_len=chat_output,
        arrival_rate=2.0,
        think_ms=(250.0, 500.0),
    )
    apps = list(chat_wl.apps)
    mr_rng = random.Random(seed ^ 0xABCD)
    t = int(mr_start_ms * MS)
    for j in range(mapreduces):
        mr = mapreduce_summary(
            (seed << 4) ^ j,
            maps=maps,
            chunk_size=map_chunk,
            output_len=map_output,
            app_index=j,
            start_ns=t,
            rubric_len=map_rubric,
        )
        mr.apps[0].ops = [
            op if not isinstance(op, GetOp) else GetOp(op.name, "throughput")
            for op in mr.apps[0].ops
        ]
        apps.extend(mr.apps)
        t += int(mr_rng.uniform(0.6, 1.0) * 1e9)
    return Workload(
        "Mixed",
        seed,
        {
            "chats": chats,
            "chat_turns": chat_turns,
            "mapreduces": mapreduces,
            "maps": maps,
            "map_chunk": map_chunk,
        },
        apps,
    )


_BUILDERS = {
    "ChainSummary": chain_summary,
    "MapReduceSummary": mapreduce_summary,
    "SharedPromptServing": shared_prompt_serving,
    "MultiAgentRounds": multi_agent_rounds,
    "ChatStream": chat_stream,
    "Mixed": mixed,
    # cli-friendly aliases
    "chain": chain_summary,
    "mapreduce": mapreduce_summary,
    "shared-prompt": shared_prompt_serving,
    "multi-agent": multi_agent_rounds,
    "chat": chat_stream,
    "mixed": mixed,
}


def generate_workload(kind: str, seed: int, **params: object) -> Workload:
    builder = _BUILDERS.get(kind)
    if builder is None:
        raise InvalidSpec(f"unknown workload kind {kind!r}")
    try:
        return builder(seed, **params)  # type: ignore[arg-type]
    except TypeError as exc:
        raise InvalidSpec(f"bad parameters for {kind}: {exc}") from exc
