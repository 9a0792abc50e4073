"""HTTP client for the semflow service.

The service keeps values and dependencies server side; this client only
moves variable ids around. Passing one function's RemoteVariable as another
function's argument therefore costs no round trip and no value transfer:
the consuming submit names the producer's variable id and the service wires
the dependency itself.
"""

from __future__ import annotations

import functools
import inspect
import itertools
from typing import Callable, Dict, Optional, Union

import httpx

from .errors import ClientError, RequestTimeout, ServiceError, VariableFailed
from .templates import ParsedTemplate, TemplateError, parse_template

_CRITERIA = ("", "latency", "throughput")


class RemoteVariable:
    """Handle to a server-side semantic variable.

    get() blocks until the producer resolves it and caches the result, so
    repeated reads cost one round trip total. A failed producer surfaces as
    VariableFailed naming the request that poisoned the chain; the failure
    is terminal and cached the same way.
    """

    def __init__(
        self,
        client: "Client",
        semantic_var_id: str,
        producer_request_id: Optional[str] = None,
    ):
        self._client = client
        self.semantic_var_id = semantic_var_id
        self.producer_request_id = producer_request_id
        self._value: Optional[str] = None
        self._failure: Optional[VariableFailed] = None

    @property
    def resolved(self) -> bool:
        return self._value is not None or self._failure is not None

    def get(self, criteria: str = "") -> str:
        if criteria not in _CRITERIA:
            raise ClientError(f"criteria must be one of {_CRITERIA}, got {criteria!r}")
        if self._failure is not None:
            raise self._failure
        if self._value is not None:
            return self._value
        body = {
            "semantic_var_id": self.semantic_var_id,
            "criteria": criteria,
            "session_id": self._client.session_id,
        }
        payload = self._client._post("/get", body)
        err = payload.get("error")
        if err is not None:
            self._failure = VariableFailed(
                self.semantic_var_id,
                err.get("code", "unknown"),
                err.get("message", ""),
                err.get("producer_request_id"),
                err.get("transform", ""),
            )
            raise self._failure
        self._value = payload["value"]
        return self._value

    def __repr__(self) -> str:
        state = "ready" if self._value is not None else ("failed" if self._failure else "pending")
        return f"RemoteVariable({self.semantic_var_id!r}, {state})"


class SemanticFunction:
    """A docstring template bound to a client; calling it submits once."""

    def __init__(self, client: "Client", fn: Callable, transforms: Dict[str, str]):
        doc = inspect.getdoc(fn)
        if not doc:
            raise TemplateError(f"{fn.__name__} has no docstring template")
        self.template: ParsedTemplate = parse_template(doc)
        params = [
            p.name
            for p in inspect.signature(fn).parameters.values()
            if p.kind in (p.POSITIONAL_OR_KEYWORD, p.KEYWORD_ONLY)
        ]
        if sorted(params) != sorted(self.template.inputs):
            raise TemplateError(
                f"{fn.__name__} arguments {sorted(params)} do not match "
                f"template inputs {sorted(self.template.inputs)}"
            )
        known = set(self.template.inputs) | {self.template.output}
        unknown = sorted(set(transforms) - known)
        if unknown:
            raise TemplateError(f"transforms name unknown placeholders: {unknown}")
        self.client = client
        self.transforms = dict(transforms)
        self._signature = inspect.signature(fn)
        functools.update_wrapper(self, fn)

    def __call__(self, *args, **kwargs) -> RemoteVariable:
        try:
            bound = self._signature.bind(*args, **kwargs)
        except TypeError as exc:
            raise TemplateError(str(exc)) from None
        return self.client.submit_template(
            self.template, dict(bound.arguments), self.transforms
        )


class Client:
    """One service connection with its own private session.

    The session is created lazily on first use and closed (best effort) by
    close(). timeout_s is the single knob covering every round trip,
    including gets that block on unresolved variables.
    """

    def __init__(self, base_url: str = "http://127.0.0.1:8823", timeout_s: float = 60.0):
        self.base_url = base_url.rstrip("/")
        self.timeout_s = timeout_s
        self._http = httpx.Client(base_url=self.base_url, timeout=timeout_s)
        self._session_id: Optional[str] = None
        self._var_seq = itertools.count()

    # -- wire plumbing ------------------------------------------------------

    def _request(self, method: str, path: str, json_body: Optional[dict]) -> dict:
        try:
            resp = self._http.request(method, path, json=json_body)
        except httpx.TimeoutException:
            raise RequestTimeout(f"{method} {path}", self.timeout_s) from None
        except httpx.HTTPError as exc:
            raise ClientError(f"{method} {path} failed: {exc}") from None
        if resp.status_code >= 400:
            try:
                err = resp.json()["error"]
            except Exception:
                err = {"code": "unknown", "message": resp.text}
            raise ServiceError(resp.status_code, err.get("code", "unknown"), err.get("message", ""))
        return resp.json()

    def _post(self, path: str, body: dict) -> dict:
        return self._request("POST", path, body)

    # -- session and variables ----------------------------------------------

    @property
    def session_id(self) -> str:
        if self._session_id is None:
            self._session_id = self._post("/session", {})["session_id"]
        return self._session_id

    def _new_var_id(self, name: str) -> str:
        return f"{self.session_id}/{name}.{next(self._var_seq)}"

    def set_variable(self, name: str, value: str) -> RemoteVariable:
        """Publish a constant as a fresh variable; returns its handle."""
        var = RemoteVariable(self, self._new_var_id(name))
        self._post(
            "/set",
            {
                "session_id": self.session_id,
                "semantic_var_id": var.semantic_var_id,
                "value": value,
            },
        )
        var._value = value  # a constant never changes; skip the round trip on get
        return var

    # -- submission ----------------------------------------------------------

    def submit_template(
        self,
        template: ParsedTemplate,
        arguments: Dict[str, Union[str, RemoteVariable]],
        transforms: Optional[Dict[str, str]] = None,
    ) -> RemoteVariable:
        """One submit: bind arguments, post the template, return the output.

        String arguments are published with /set first; RemoteVariable
        arguments are passed by id without touching their values.
        """
        transforms = transforms or {}
        placeholders = []
        for name in template.inputs:
            value = arguments[name]
            if isinstance(value, RemoteVariable):
                var_id = value.semantic_var_id
            elif isinstance(value, str):
                var_id = self.set_variable(name, value).semantic_var_id
            else:
                raise TemplateError(
                    f"argument {name!r} must be str or RemoteVariable, "
                    f"got {type(value).__name__}"
                )
            placeholders.append(
                {
                    "name": name,
                    "in_out": True,
                    "semantic_var_id": var_id,
                    "transforms": transforms.get(name, "identity"),
                }
            )
        out_id = self._new_var_id(template.output)
        placeholders.append(
            {
                "name": template.output,
                "in_out": False,
                "semantic_var_id": out_id,
                "transforms": transforms.get(template.output, "identity"),
            }
        )
        body = {
            "prompt": template.text,
            "placeholders": placeholders,
            "session_id": self.session_id,
        }
        rid = self._post("/submit", body)["request_id"]
        return RemoteVariable(self, out_id, producer_request_id=rid)

    def semantic_function(
        self, fn: Optional[Callable] = None, *, transforms: Optional[Dict[str, str]] = None
    ):
        """Decorator: the docstring is the prompt template, arguments are its
        inputs, the return value is a RemoteVariable for its output. Works
        bare or with a transforms mapping of placeholder name to spec."""

        def wrap(f: Callable) -> SemanticFunction:
            return SemanticFunction(self, f, transforms or {})

        return wrap if fn is None else wrap(fn)

    # -- service introspection ------------------------------------------------

    def health(self) -> dict:
        return self._request("GET", "/health", None)

    def stats(self) -> dict:
        return self._request("GET", "/stats", None)

    # -- lifecycle -------------------------------------------------------------

    def close(self) -> None:
        if self._session_id is not None:
            try:
                self._request("DELETE", f"/session/{self._session_id}", None)
            except ClientError:
                pass  # closing is best effort; the server reaps on its own
            self._session_id = None
        self._http.close()

    def __enter__(self) -> "Client":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
