"""Exception types shared across the package.

Every error the wire surface can report maps onto one of these; the HTTP
layer translates them to status codes, everything below raises them directly.
"""

from __future__ import annotations


class SemflowError(Exception):
    """Base class; `code` is the stable machine-readable name."""

    code = "internal"

    def __init__(self, message: str = "", **details):
        super().__init__(message or self.__class__.__name__)
        self.message = message or self.__class__.__name__
        self.details = details


# template / prompt errors

class MalformedPlaceholder(SemflowError):
    code = "malformed_placeholder"


class DuplicatePlaceholderName(SemflowError):
    code = "duplicate_placeholder_name"


class MultipleOutputs(SemflowError):
    code = "multiple_outputs"


class TransformFailed(SemflowError):
    code = "transform_failed"


# variable / dag errors

class AlreadySet(SemflowError):
    code = "already_set"


class UnknownVariable(SemflowError):
    code = "unknown_variable"


class UnknownSession(SemflowError):
    code = "unknown_session"


class DuplicateProducer(SemflowError):
    code = "duplicate_producer"


class CycleDetected(SemflowError):
    code = "cycle_detected"


class NoAnnotatedOutput(SemflowError):
    code = "no_annotated_output"


class SessionClosed(SemflowError):
    code = "session_closed"


# engine errors

class OutOfMemory(SemflowError):
    code = "out_of_memory"


class UnknownContext(SemflowError):
    code = "unknown_context"


class UnknownParentContext(SemflowError):
    code = "unknown_parent_context"


class ContextBusy(SemflowError):
    code = "context_busy"


class MissingScript(SemflowError):
    code = "missing_script"


# wire / harness errors

class MalformedBody(SemflowError):
    code = "malformed_body"


class GetTimeout(SemflowError):
    code = "get_timeout"


class InvalidSpec(SemflowError):
    code = "invalid_spec"


class SpecMismatch(SemflowError):
    code = "spec_mismatch"
