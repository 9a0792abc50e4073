"""Client-side exception hierarchy.

TemplateError fires locally, before anything touches the network; the other
three wrap outcomes of a round trip.
"""

from __future__ import annotations

from typing import Optional


class ClientError(Exception):
    """Base for everything this package raises on purpose."""


class TemplateError(ClientError):
    """Docstring template or argument binding rejected by local validation."""


class RequestTimeout(ClientError):
    """The configured client timeout elapsed before the service answered."""

    def __init__(self, operation: str, timeout_s: float):
        self.operation = operation
        self.timeout_s = timeout_s
        super().__init__(f"{operation} exceeded the {timeout_s}s client timeout")


class ServiceError(ClientError):
    """Non-2xx response; carries the service's error envelope."""

    def __init__(self, status: int, code: str, message: str):
        self.status = status
        self.code = code
        self.message = message
        super().__init__(f"{code} (HTTP {status}): {message}")


class VariableFailed(ClientError):
    """The producing request failed upstream; the variable holds no value.

    producer_request_id names the request whose failure poisoned the chain,
    which may be several submits upstream of the variable that was fetched.
    """

    def __init__(
        self,
        semantic_var_id: str,
        code: str,
        message: str,
        producer_request_id: Optional[str],
        transform: str = "",
    ):
        self.semantic_var_id = semantic_var_id
        self.code = code
        self.message = message
        self.producer_request_id = producer_request_id
        self.transform = transform
        super().__init__(
            f"variable {semantic_var_id} failed: {code}: {message} "
            f"(producer request {producer_request_id})"
        )
