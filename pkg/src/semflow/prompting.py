"""Prompt templates, semantic variables, and value transforms.

A template is constant text interleaved with `{{input:NAME}}` /
`{{output:NAME}}` placeholders. Placeholder names are `[A-Za-z0-9_]+`,
unique within a template, and at most one output is allowed. There is no
escape syntax: any `{{` must open a well-formed placeholder.

A semantic variable is a single-assignment text cell: Empty until its
producer (or a client set) writes it, then terminally Ready or Failed.
"""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Union

from .errors import (
    AlreadySet,
    DuplicatePlaceholderName,
    MalformedBody,
    MalformedPlaceholder,
    MultipleOutputs,
    TransformFailed,
)

_NAME_RE = re.compile(r"^[A-Za-z0-9_]+$")


class Direction(enum.Enum):
    INPUT = "input"
    OUTPUT = "output"


@dataclass(frozen=True)
class ConstantText:
    text: str


@dataclass(frozen=True)
class Placeholder:
    name: str
    direction: Direction
    transform: Optional["TransformSpec"] = None


Segment = Union[ConstantText, Placeholder]


@dataclass
class PromptTemplate:
    segments: List[Segment]

    def placeholders(self) -> List[Placeholder]:
        return [s for s in self.segments if isinstance(s, Placeholder)]

    def input_names(self) -> List[str]:
        return [p.name for p in self.placeholders() if p.direction is Direction.INPUT]

    def output_placeholder(self) -> Optional[Placeholder]:
        for p in self.placeholders():
            if p.direction is Direction.OUTPUT:
                return p
        return None

    def render_source(self) -> str:
        out = []
        for seg in self.segments:
            if isinstance(seg, ConstantText):
                out.append(seg.text)
            else:
                out.append("{{%s:%s}}" % (seg.direction.value, seg.name))
        return "".join(out)


def parse_prompt_template(text: str) -> PromptTemplate:
    """Parse template text; raises on malformed or duplicate placeholders."""
    segments: List[Segment] = []
    seen: set[str] = set()
    output_seen = False
    pos = 0
    while True:
        start = text.find("{{", pos)
        if start < 0:
            if pos < len(text):
                segments.append(ConstantText(text[pos:]))
            break
        if start > pos:
            segments.append(ConstantText(text[pos:start]))
        end = text.find("}}", start + 2)
        if end < 0:
            raise MalformedPlaceholder(
                f"unterminated placeholder at byte {start}", offset=start
            )
        directive = text[start + 2 : end]
        if ":" not in directive:
            raise MalformedPlaceholder(
                f"placeholder {directive!r} has no direction", offset=start
            )
        kind, _, name = directive.partition(":")
        if kind not in ("input", "output"):
            raise MalformedPlaceholder(
                f"unknown direction {kind!r} at byte {start}", offset=start
            )
        if not _NAME_RE.match(name):
            raise MalformedPlaceholder(
                f"invalid placeholder name {name!r} at byte {start}", offset=start
            )
        if name in seen:
            raise DuplicatePlaceholderName(f"placeholder {name!r} repeats", name=name)
        seen.add(name)
        direction = Direction.INPUT if kind == "input" else Direction.OUTPUT
        if direction is Direction.OUTPUT:
            if output_seen:
                raise MultipleOutputs("template declares more than one output")
            output_seen = True
        segments.append(Placeholder(name, direction))
        pos = end + 2
    return PromptTemplate(segments)


# ---------------------------------------------------------------------------
# transforms

@dataclass(frozen=True)
class TransformSpec:
    """Pure post-generation rewrite of an output value.

    Kinds: identity | json (dotted field path) | regex (pattern + group) |
    split (separator + index) | wrap (prefix + suffix). Applied on the
    producing side before the value reaches its variable.
    """

    kind: str
    path: str = ""
    pattern: str = ""
    group: int = 0
    separator: str = ""
    index: int = 0
    prefix: str = ""
    suffix: str = ""


IDENTITY = TransformSpec("identity")


def parse_transform_spec(text: str) -> TransformSpec:
    """Parse the wire syntax; raises MalformedBody on unknown forms."""
    if text in ("", "identity"):
        return IDENTITY
    kind, sep, rest = text.partition(":")
    if kind == "json" and sep:
        if not rest:
            raise MalformedBody("json transform needs a field path")
        return TransformSpec("json", path=rest)
    if kind == "regex" and sep:
        pattern, sep2, group = rest.rpartition(":")
        if not sep2 or not group.lstrip("-").isdigit():
            raise MalformedBody(f"regex transform needs PATTERN:GROUP, got {text!r}")
        g = int(group)
        if g < 0:
            raise MalformedBody("regex group must be >= 0")
        return TransformSpec("regex", pattern=pattern, group=g)
    if kind == "split" and sep:
        separator, sep2, index = rest.rpartition(":")
        if not sep2 or not index.lstrip("-").isdigit():
            raise MalformedBody(f"split transform needs SEP:IDX, got {text!r}")
        i = int(index)
        if i < 0:
            raise MalformedBody("split index must be >= 0")
        if separator == "":
            raise MalformedBody("split separator must be non-empty")
        return TransformSpec("split", separator=separator, index=i)
    if kind == "wrap" and sep:
        prefix, sep2, suffix = rest.partition(":")
        if not sep2:
            raise MalformedBody(f"wrap transform needs PRE:SUF, got {text!r}")
        return TransformSpec("wrap", prefix=prefix, suffix=suffix)
    raise MalformedBody(f"unknown transform {text!r}")


def serialize_transform_spec(spec: TransformSpec) -> str:
    if spec.kind == "identity":
        return "identity"
    if spec.kind == "json":
        return f"json:{spec.path}"
    if spec.kind == "regex":
        return f"regex:{spec.pattern}:{spec.group}"
    if spec.kind == "split":
        return f"split:{spec.separator}:{spec.index}"
    if spec.kind == "wrap":
        return f"wrap:{spec.prefix}:{spec.suffix}"
    raise MalformedBody(f"unknown transform kind {spec.kind!r}")


def _apply_json(spec: TransformSpec, value: str) -> str:
    try:
        node = json.loads(value)
    except json.JSONDecodeError as exc:
        raise TransformFailed(f"value is not JSON: {exc}") from None
    for part in spec.path.split("."):
        if not isinstance(node, dict) or part not in node:
            raise TransformFailed(f"path {spec.path!r} missing at {part!r}")
        node = node[part]
    if not isinstance(node, str):
        raise TransformFailed(f"field {spec.path!r} is not a string")
    return node


def _apply_regex(spec: TransformSpec, value: str) -> str:
    try:
        compiled = re.compile(spec.pattern)
    except re.error as exc:
        raise TransformFailed(f"bad pattern: {exc}") from None
    m = compiled.search(value)
    if m is None:
        raise TransformFailed(f"pattern {spec.pattern!r} found no match")
    try:
        got = m.group(spec.group)
    except IndexError:
        raise TransformFailed(f"group {spec.group} not captured") from None
    if got is None:
        raise TransformFailed(f"group {spec.group} did not participate")
    return got


def _apply_split(spec: TransformSpec, value: str) -> str:
    parts = value.split(spec.separator)
    if spec.index >= len(parts):
        raise TransformFailed(
            f"split produced {len(parts)} parts, index {spec.index} out of range"
        )
    return parts[spec.index]


_TRANSFORM_HANDLERS: Dict[str, Callable[[TransformSpec, str], str]] = {
    "identity": lambda spec, value: value,
    "json": _apply_json,
    "regex": _apply_regex,
    "split": _apply_split,
    "wrap": lambda spec, value: spec.prefix + value + spec.suffix,
}


def register_transform(kind: str, handler: Callable[[TransformSpec, str], str]) -> None:
    """Extension point: add a new transform kind."""
    _TRANSFORM_HANDLERS[kind] = handler


def apply_transform(spec: TransformSpec, value: str) -> str:
    """Total over well-formed specs: returns the value or raises TransformFailed."""
    handler = _TRANSFORM_HANDLERS.get(spec.kind)
    if handler is None:
        raise TransformFailed(f"unknown transform kind {spec.kind!r}")
    try:
        return handler(spec, value)
    except TransformFailed:
        raise
    except Exception as exc:  # never trap: fold into the failure channel
        raise TransformFailed(f"{spec.kind} transform raised {exc!r}") from None


# ---------------------------------------------------------------------------
# semantic variables

class VarState(enum.Enum):
    EMPTY = "empty"
    READY = "ready"
    FAILED = "failed"


class Criterion(enum.Enum):
    LATENCY = "latency"
    THROUGHPUT = "throughput"


@dataclass
class FailureInfo:
    code: str
    message: str
    producer_request_id: Optional[str] = None
    transform: Optional[str] = None
    var_id: Optional[str] = None

    def as_dict(self) -> dict:
        out = {"code": self.code, "message": self.message}
        if self.producer_request_id is not None:
            out["producer_request_id"] = self.producer_request_id
        if self.transform is not None:
            out["transform"] = self.transform
        if self.var_id is not None:
            out["var_id"] = self.var_id
        return out


@dataclass
class SemanticVariable:
    var_id: str
    session_id: str
    name: str = ""
    state: VarState = VarState.EMPTY
    value: Optional[str] = None
    failure: Optional[FailureInfo] = None
    criterion: Optional[Criterion] = None
    criterion_source: Optional[str] = None  # "get" | "deduced"
    ready_at_ns: Optional[int] = None

    def is_terminal(self) -> bool:
        return self.state is not VarState.EMPTY

    def set_ready(self, value: str, now_ns: int = 0) -> None:
        if self.state is not VarState.EMPTY:
            raise AlreadySet(f"variable {self.var_id} already {self.state.value}")
        self.state = VarState.READY
        self.value = value
        self.ready_at_ns = now_ns

    def set_failed(self, failure: FailureInfo, now_ns: int = 0) -> None:
        if self.state is not VarState.EMPTY:
            raise AlreadySet(f"variable {self.var_id} already {self.state.value}")
        self.state = VarState.FAILED
        self.failure = failure
        self.ready_at_ns = now_ns

    def attach_criterion(self, criterion: Criterion, source: str) -> None:
        """Client annotations stick; deduction never overwrites a get."""
        if source == "get":
            self.criterion = criterion
            self.criterion_source = "get"
            return
        if self.criterion_source == "get":
            return
        self.criterion = criterion
        self.criterion_source = source
