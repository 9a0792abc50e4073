"""Python SDK for the semflow serving API."""

from .client import Client, RemoteVariable, SemanticFunction
from .errors import (
    ClientError,
    RequestTimeout,
    ServiceError,
    TemplateError,
    VariableFailed,
)
from .templates import ParsedTemplate, parse_template

__all__ = [
    "Client",
    "RemoteVariable",
    "SemanticFunction",
    "ClientError",
    "RequestTimeout",
    "ServiceError",
    "TemplateError",
    "VariableFailed",
    "ParsedTemplate",
    "parse_template",
]
