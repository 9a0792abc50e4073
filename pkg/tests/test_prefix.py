"""Prefix hash chains, rendering, and the cluster-wide index."""

import random

from semflow.dag import Request
from semflow.prefix import (
    PrefixIndex,
    ctx_owner,
    render_prefix,
    req_owner,
)
from semflow.prompting import parse_prompt_template
from semflow.tokenizer import FNV64_EMPTY, ReferenceTokenizer

import oracles


def req_of(text, bindings, rid="r1"):
    return Request(rid, "s", parse_prompt_template(text), bindings)


def test_render_code_template_two_entries():
    tok = ReferenceTokenizer()
    req = req_of(
        "Write python code of {{input:task}}.\n Code: {{output:code}}",
        {"task": "v_task", "code": "v_code"},
    )
    rp = render_prefix(req, {"v_task": "quicksort"}, tok)
    assert rp.complete
    assert rp.segment_texts == ["Write python code of ", "quicksort.\n Code: "]
    assert rp.full_text() == "Write python code of quicksort.\n Code: "
    assert len(rp.chain) == 2

    # hashes recomputed from the byte level up
    h0 = oracles.fnv64_ids(tok.tokenize("Write python code of "))
    h1 = oracles.fnv64_ids(tok.tokenize("quicksort.\n Code: "), seed=h0)
    assert rp.chain.hashes() == [h0, h1]
    # seams here never merge pieces, so the chain equals the flat hash
    assert h1 == oracles.fnv64_ids(tok.tokenize(rp.full_text()))

    assert rp.chain.entries[0].byte_offset == len("Write python code of ".encode())
    assert rp.chain.entries[1].byte_offset == len(rp.full_text().encode())
    assert rp.total_tokens() == len(tok.tokenize(rp.full_text()))


def test_render_stops_at_unresolved_input():
    tok = ReferenceTokenizer()
    req = req_of(
        "intro {{input:a}} middle {{input:b}} {{output:o}}",
        {"a": "va", "b": "vb", "o": "vo"},
    )
    rp = render_prefix(req, {"va": "one"}, tok)
    assert not rp.complete
    # chain covers everything before the unresolved placeholder
    assert rp.segment_texts == ["intro ", "one middle "]
    assert len(rp.chain) == 2


def test_render_leading_placeholders_share_empty_hash():
    tok = ReferenceTokenizer()
    req = req_of(
        "{{input:conv}}{{input:msg}}{{output:a}}",
        {"conv": "vc", "msg": "vm", "a": "va"},
    )
    rp = render_prefix(req, {"vc": "", "vm": "hi there"}, tok)
    assert rp.complete
    assert rp.segment_texts == ["", "", "hi there"]
    hashes = rp.chain.hashes()
    assert hashes[0] == FNV64_EMPTY
    assert hashes[1] == FNV64_EMPTY  # empty conversation adds no tokens
    assert hashes[2] == oracles.fnv64_ids(tok.tokenize("hi there"))
    # only the third boundary covers tokens; the empty ones are unindexable
    covered = []
    total = 0
    for i, seg in enumerate(rp.segment_tokens):
        total += len(seg)
        covered.append(total)
    assert covered == [0, 0, len(tok.tokenize("hi there"))]


def test_render_no_output_template():
    tok = ReferenceTokenizer()
    rp = render_prefix(req_of("hello tail", {}), {}, tok)
    assert rp.complete
    assert rp.segment_texts == ["hello tail"]
    assert rp.chain.hashes() == [oracles.fnv64_ids(tok.tokenize("hello tail"))]
    empty = render_prefix(req_of("", {}), {}, tok)
    assert empty.chain.hashes() == [FNV64_EMPTY]
    assert empty.total_tokens() == 0


def test_chain_equals_flat_hash_without_seam_merges():
    tok = ReferenceTokenizer()
    rng = random.Random(61)
    words = ["alpha", "beta", "gamma", "delta"]
    for _ in range(150):
        n_inputs = rng.randint(1, 3)
        text = ""
        bindings = {}
        values = {}
        for i in range(n_inputs):
            text += "|" + rng.choice(words) + "|" + "{{input:n%d}}" % i
            bindings[f"n{i}"] = f"v{i}"
            # values bracketed by punctuation so seams never merge pieces
            values[f"v{i}"] = "(" + " ".join(rng.sample(words, rng.randint(1, 3))) + ")"
        text += "|{{output:res}}"
        bindings["res"] = "vo"
        rp = render_prefix(req_of(text, bindings), values, tok)
        assert rp.complete
        assert rp.chain.hashes()[-1] == oracles.fnv64_ids(tok.tokenize(rp.full_text()))


def test_seam_merge_changes_the_flat_hash():
    # "abc" + "def" retokenizes as one piece; the chain hash keeps the seam
    tok = ReferenceTokenizer()
    rp = render_prefix(
        req_of("abc{{input:x}}{{output:o}}", {"x": "vx", "o": "vo"}),
        {"vx": "def"},
        tok,
    )
    assert rp.chain.hashes()[-1] != oracles.fnv64_ids(tok.tokenize("abcdef"))


def test_shared_system_prompt_diverges_at_question():
    tok = ReferenceTokenizer()
    system = "You are a careful reviewer. " * 40
    tpl = "{{input:sys}}{{input:q}}{{output:a}}"
    chains = []
    for rid, question in (("r1", "first question?"), ("r2", "second one.")):
        rp = render_prefix(
            req_of(tpl, {"sys": "v_sys", "q": f"vq_{rid}", "a": f"va_{rid}"}, rid),
            {"v_sys": system, f"vq_{rid}": question},
            tok,
        )
        chains.append(rp.chain.hashes())
    a, b = chains
    assert a[0] == b[0] == FNV64_EMPTY
    assert a[1] == b[1]      # same system prompt
    assert a[2] != b[2]      # different questions


# -- index ---------------------------------------------------------------------

def test_index_longest_prefix_wins():
    index = PrefixIndex()
    index.insert(req_owner("r1"), [10, 20, 30])
    index.insert(req_owner("r2"), [10, 20])
    index.insert(ctx_owner("e0", "c1"), [10])
    match = index.lookup([10, 20, 30, 40])
    assert match.depth == 3
    assert match.queued == ["r1"]
    assert match.contexts == []
    match = index.lookup([10, 20])
    assert (match.depth, match.queued) == (2, ["r1", "r2"])
    match = index.lookup([10])
    assert match.depth == 1
    assert match.queued == ["r1", "r2"]
    assert match.contexts == [("e0", "c1")]
    assert not index.lookup([99])
    assert index.lookup([99]).depth == 0


def test_index_exclude_falls_through_to_shallower_owners():
    index = PrefixIndex()
    index.insert(req_owner("r1"), [10, 20])
    index.insert(req_owner("r2"), [10])
    match = index.lookup([10, 20], exclude={req_owner("r1")})
    assert (match.depth, match.queued) == (1, ["r2"])
    assert not index.lookup([10, 20], exclude={req_owner("r1"), req_owner("r2")})


def test_index_reinsert_replaces_and_remove_is_tolerant():
    index = PrefixIndex()
    index.insert(req_owner("r1"), [1, 2])
    index.insert(req_owner("r1"), [3])
    assert index.owner_chain(req_owner("r1")) == [3]
    assert not index.lookup([1, 2])
    assert index.lookup([3]).queued == ["r1"]
    index.remove(req_owner("r1"))
    index.remove(req_owner("r1"))  # second remove is a no-op
    index.remove(req_owner("never-inserted"))
    assert index.live_owners() == []
    assert index.owner_chain(req_owner("r1")) is None


def test_index_owner_ordering_is_deterministic():
    index = PrefixIndex()
    for rid in ("rb", "ra", "rc"):
        index.insert(req_owner(rid), [5])
    index.insert(ctx_owner("e1", "c2"), [5])
    index.insert(ctx_owner("e0", "c9"), [5])
    match = index.lookup([5])
    assert match.queued == ["ra", "rb", "rc"]
    assert match.contexts == [("e0", "c9"), ("e1", "c2")]


def test_index_matches_brute_force():
    assert oracles.run_prefix_index_cases(500, seed=404) == 500
