"""HTTP service over the semantic manager.

Wire bodies:

  submit: {"prompt": str,
           "placeholders": [{"name": str, "in_out": bool,
                             "semantic_var_id": str, "transforms": str}, ...],
           "session_id": str}
  get:    {"semantic_var_id": str, "criteria": str, "session_id": str}

in_out=true marks an input placeholder. "criteria" must be "latency",
"throughput", or "" (anything else is a 400). The body carries no sampling
or script fields; serve mode takes scripted outputs from a script book keyed
by output placeholder name, falling back to a fixed default line.
"""

from __future__ import annotations

import dataclasses
import json
from typing import Dict, List, Optional

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, ConfigDict

from .errors import MalformedBody, SemflowError
from .manager import SemanticManager
from .prompting import (
    Criterion,
    Direction,
    parse_prompt_template,
    parse_transform_spec,
)

_STATUS_BY_CODE = {
    "malformed_placeholder": 400,
    "duplicate_placeholder_name": 400,
    "multiple_outputs": 400,
    "malformed_body": 400,
    "invalid_spec": 400,
    "missing_script": 400,
    "transform_failed": 400,
    "unknown_variable": 404,
    "unknown_session": 404,
    "unknown_context": 404,
    "unknown_parent_context": 404,
    "already_set": 409,
    "duplicate_producer": 409,
    "cycle_detected": 409,
    "session_closed": 409,
    "context_busy": 409,
    "out_of_memory": 503,
    "get_timeout": 504,
}

DEFAULT_SCRIPT = "scripted output placeholder text"


class PlaceholderBody(BaseModel):
    model_config = ConfigDict(extra="forbid")
    name: str
    in_out: bool
    semantic_var_id: str
    transforms: str = "identity"


class SubmitBody(BaseModel):
    model_config = ConfigDict(extra="forbid")
    prompt: str
    placeholders: List[PlaceholderBody]
    session_id: str


class GetBody(BaseModel):
    model_config = ConfigDict(extra="forbid")
    semantic_var_id: str
    criteria: str = ""
    session_id: str = ""


class SetBody(BaseModel):
    model_config = ConfigDict(extra="forbid")
    session_id: str
    semantic_var_id: str
    value: str


# -- canonical wire serialization -------------------------------------------
# Field order is fixed; serialize(parse(body)) reproduces a canonical body
# byte for byte.

def serialize_submit_body(body: SubmitBody) -> str:
    obj = {
        "prompt": body.prompt,
        "placeholders": [
            {
                "name": p.name,
                "in_out": p.in_out,
                "semantic_var_id": p.semantic_var_id,
                "transforms": p.transforms,
            }
            for p in body.placeholders
        ],
        "session_id": body.session_id,
    }
    return json.dumps(obj, separators=(", ", ": "))


def serialize_get_body(body: GetBody) -> str:
    obj = {
        "semantic_var_id": body.semantic_var_id,
        "criteria": body.criteria,
        "session_id": body.session_id,
    }
    return json.dumps(obj, separators=(", ", ": "))


def parse_submit_body(text: str) -> SubmitBody:
    try:
        return SubmitBody.model_validate(json.loads(text))
    except ValueError as exc:
        raise MalformedBody(str(exc)) from exc


def parse_get_body(text: str) -> GetBody:
    try:
        return GetBody.model_validate(json.loads(text))
    except ValueError as exc:
        raise MalformedBody(str(exc)) from exc


_CRITERIA = {"latency": Criterion.LATENCY, "throughput": Criterion.THROUGHPUT, "": None}


def _criterion(text: str) -> Optional[Criterion]:
    if text not in _CRITERIA:
        raise MalformedBody(f"criteria must be latency, throughput, or empty, got {text!r}")
    return _CRITERIA[text]


def _failure_payload(var) -> Dict[str, object]:
    info = var.failure
    return {
        "code": info.code,
        "message": info.message,
        "producer_request_id": info.producer_request_id,
        "transform": info.transform,
    }


def create_app(
    manager: SemanticManager,
    script_book: Optional[Dict[str, str]] = None,
) -> FastAPI:
    app = FastAPI(title="semflow", docs_url=None, redoc_url=None)
    scripts = dict(script_book or {})

    @app.exception_handler(SemflowError)
    def semflow_error(_: Request, exc: SemflowError) -> JSONResponse:
        status = _STATUS_BY_CODE.get(exc.code, 500)
        return JSONResponse(
            {"error": {"code": exc.code, "message": exc.message}}, status_code=status
        )

    @app.exception_handler(RequestValidationError)
    def validation_error(_: Request, exc: RequestValidationError) -> JSONResponse:
        return JSONResponse(
            {"error": {"code": "malformed_body", "message": str(exc.errors())}},
            status_code=400,
        )

    @app.get("/health")
    def health() -> Dict[str, str]:
        return {"status": "ok"}

    @app.get("/stats")
    def stats() -> Dict[str, object]:
        return {
            "submits": manager.submit_count,
            "sessions_open": sum(1 for s in manager.sessions.values() if s.open),
            "sessions_total": len(manager.sessions),
            "requests_total": len(manager.runtimes),
            "virtual_time_ms": manager.now_ns / 1_000_000,
            "peak_blocks": manager.peak_blocks(),
        }

    @app.post("/session")
    def create_session() -> Dict[str, str]:
        return {"session_id": manager.create_session()}

    @app.delete("/session/{session_id}")
    def close_session(session_id: str) -> Dict[str, bool]:
        manager.close_session(session_id)
        return {"ok": True}

    @app.post("/set")
    def set_variable(body: SetBody) -> Dict[str, bool]:
        manager.set_variable(body.session_id, body.semantic_var_id, body.value)
        return {"ok": True}

    @app.post("/submit")
    def submit(body: SubmitBody) -> Dict[str, str]:
        template = parse_prompt_template(body.prompt)
        wire = {p.name: p for p in body.placeholders}
        if len(wire) != len(body.placeholders):
            raise MalformedBody("duplicate placeholder names in body")
        tpl_names = {ph.name: ph for ph in template.placeholders()}
        if set(wire) != set(tpl_names):
            raise MalformedBody(
                f"placeholder lists disagree: template {sorted(tpl_names)}, "
                f"body {sorted(wire)}"
            )
        segments = []
        script = DEFAULT_SCRIPT
        for seg in template.segments:
            if not hasattr(seg, "direction"):
                segments.append(seg)
                continue
            p = wire[seg.name]
            is_input = seg.direction is Direction.INPUT
            if p.in_out != is_input:
                raise MalformedBody(f"placeholder {seg.name} direction mismatch")
            spec = parse_transform_spec(p.transforms)
            segments.append(dataclasses.replace(seg, transform=spec))
            if not is_input:
                script = scripts.get(seg.name, DEFAULT_SCRIPT)
        template = dataclasses.replace(template, segments=segments)
        bindings = {p.name: p.semantic_var_id for p in body.placeholders}
        rid = manager.submit(
            body.session_id, body.prompt, bindings, script=script, template=template
        )
        return {"request_id": rid}

    @app.post("/get")
    def get_variable(body: GetBody) -> Dict[str, object]:
        crit = _criterion(body.criteria)
        var = manager.get_blocking(
            body.semantic_var_id,
            crit,
            body.session_id or None,
            timeout_s=manager.config.get_timeout_s,
        )
        if var.failure is not None:
            return {
                "semantic_var_id": body.semantic_var_id,
                "error": _failure_payload(var),
            }
        return {"semantic_var_id": body.semantic_var_id, "value": var.value}

    return app
