"""Exception hierarchy shared by every stage of the pipeline.

Errors fall into three families that the CLI maps onto exit codes:
bad input (1), rejected query (2) and internal failure (3).
"""

from __future__ import annotations


class RdbridgeError(Exception):
    """Base class for all errors raised by rdbridge."""

    exit_code = 3

    @property
    def name(self) -> str:
        return type(self).__name__


class InputError(RdbridgeError):
    """The caller handed us something malformed or inconsistent."""

    exit_code = 1


class RejectedQuery(RdbridgeError):
    """The query is well formed but falls outside the supported dialect."""

    exit_code = 2


class InternalError(RdbridgeError):
    """An invariant we rely on did not hold; always a bug on our side."""

    exit_code = 3


# schema-core


class ParseError(InputError):
    pass


class DuplicateName(InputError):
    pass


class DanglingReference(InputError):
    pass


class MissingTableFile(InputError):
    pass


class ArityMismatch(InputError):
    pass


class TypeParseError(InputError):
    pass


class DuplicateKey(InputError):
    pass


class ConflictingHints(InputError):
    pass


# direct-mapping


class UnrepairedSchema(InputError):
    pass


# sql-frontend


class SqlSyntaxError(InputError):
    def __init__(self, message: str, position: int | None = None, token: str | None = None):
        if position is not None:
            message = f"{message} at position {position}" + (f" near {token!r}" if token else "")
        super().__init__(message)
        self.position = position
        self.token = token


class UnknownIdentifier(InputError):
    pass


class TypeMismatch(InputError):
    pass


class UnsupportedConstruct(RejectedQuery):
    def __init__(self, construct: str, detail: str | None = None):
        super().__init__(construct if detail is None else f"{construct}: {detail}")
        self.construct = construct


class ProjectionOverflow(RejectedQuery):
    pass


# sparql-backend


class EmissionBug(InternalError):
    pass


class UnknownProperty(InternalError):
    pass


class InvariantViolation(InternalError):
    pass


# engines


class EvaluationTypeError(InputError):
    pass


class UnsupportedSparql(InternalError):
    pass
