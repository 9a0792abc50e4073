"""Local prompt-template validation.

Mirrors the service's placeholder grammar so a bad docstring fails at
decoration time instead of as a 400 from the wire. Placeholders look like
{{input:name}} / {{output:name}}; names are [A-Za-z0-9_]+, no repeats, at
most one output.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import List

from .errors import TemplateError

_NAME_RE = re.compile(r"^[A-Za-z0-9_]+$")


@dataclass(frozen=True)
class ParsedTemplate:
    text: str
    inputs: List[str]   # in order of appearance
    output: str


def parse_template(text: str) -> ParsedTemplate:
    """Validate template text and pull out the placeholder names.

    Raises TemplateError on any shape the service would reject, plus one
    stricter rule of our own: a semantic function must produce something,
    so exactly one output placeholder is required (the service tolerates
    zero for plain fills).
    """
    inputs: List[str] = []
    output = ""
    seen: set[str] = set()
    pos = 0
    while True:
        start = text.find("{{", pos)
        if start < 0:
            break
        end = text.find("}}", start + 2)
        if end < 0:
            raise TemplateError(f"unterminated placeholder at byte {start}")
        directive = text[start + 2 : end]
        kind, sep, name = directive.partition(":")
        if not sep:
            raise TemplateError(f"placeholder {directive!r} has no direction")
        if kind not in ("input", "output"):
            raise TemplateError(f"unknown direction {kind!r} in {directive!r}")
        if not _NAME_RE.match(name):
            raise TemplateError(f"invalid placeholder name {name!r}")
        if name in seen:
            raise TemplateError(f"placeholder {name!r} repeats")
        seen.add(name)
        if kind == "output":
            if output:
                raise TemplateError("template declares more than one output")
            output = name
        else:
            inputs.append(name)
        pos = end + 2
    if not output:
        raise TemplateError("template declares no output placeholder")
    return ParsedTemplate(text, inputs, output)
