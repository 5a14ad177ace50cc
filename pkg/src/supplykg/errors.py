"""Exception hierarchy.

Configuration problems derive from :class:`ConfigError` and everything that
can go wrong while running the pipeline derives from :class:`PipelineError`.
The CLI maps the two families onto distinct exit codes.
"""

from __future__ import annotations

from typing import Any


class SupplyKGError(Exception):
    """Base class. ``context`` carries identifiers added as the error propagates."""

    def __init__(self, message: str = "", **context: Any) -> None:
        super().__init__(message)
        self.message = message
        self.context: dict[str, Any] = dict(context)

    def annotate(self, **context: Any) -> "SupplyKGError":
        for key, value in context.items():
            self.context.setdefault(key, value)
        return self

    @property
    def code(self) -> str:
        return type(self).__name__

    def __str__(self) -> str:
        if not self.context:
            return self.message
        ctx = ", ".join(f"{k}={v}" for k, v in sorted(self.context.items()))
        return f"{self.message} [{ctx}]"


class ConfigError(SupplyKGError):
    pass


class PipelineError(SupplyKGError):
    pass


# schema
class MalformedConfig(ConfigError):
    pass


class DuplicateTypeName(ConfigError):
    pass


class InsufficientExamples(ConfigError):
    pass


class UnknownEndpointType(ConfigError):
    pass


class EmptyLabel(PipelineError):
    pass


# ingest
class TransportError(PipelineError):
    pass


class Timeout(TransportError):
    pass


class NonTextContent(PipelineError):
    pass


class EmptyAfterCleaning(PipelineError):
    pass


class SentenceExceedsBudget(PipelineError):
    def __init__(self, message: str, sentence: str = "", tokens: int = 0, **context: Any) -> None:
        super().__init__(message, **context)
        self.sentence = sentence
        self.tokens = tokens


# prompts
class EmptyNameList(PipelineError):
    pass


# llm client
class RateLimited(TransportError):
    pass


class FixtureMiss(PipelineError):
    def __init__(self, message: str, digest: str = "", **context: Any) -> None:
        super().__init__(message, **context)
        self.digest = digest


class StorageError(PipelineError):
    pass


# parsing
class Unparseable(PipelineError):
    def __init__(self, message: str, raw: str = "", **context: Any) -> None:
        super().__init__(message, **context)
        self.raw = raw


class EmptyResponse(PipelineError):
    pass


class LengthMismatch(PipelineError):
    pass


class NonInteger(PipelineError):
    pass


# disambiguation / graph
class UncoveredNode(PipelineError):
    pass


class UnmappedEndpoint(PipelineError):
    pass


class InvalidGraph(PipelineError):
    pass


class DanglingEdge(InvalidGraph):
    pass


class DuplicateNodeId(InvalidGraph):
    pass


class UnknownNode(PipelineError):
    pass


class WrongNodeType(PipelineError):
    pass


class SinkError(PipelineError):
    pass


class Ambiguous(PipelineError):
    def __init__(self, message: str, candidates: list[str] | None = None, **context: Any) -> None:
        super().__init__(message, **context)
        self.candidates = list(candidates or [])


class NotFound(PipelineError):
    def __init__(self, message: str, near: list[str] | None = None, **context: Any) -> None:
        super().__init__(message, **context)
        self.near = list(near or [])


# eval
class EmptyJudgmentSet(PipelineError):
    pass


class DegenerateSeries(PipelineError):
    pass


class ZeroMeanCV(PipelineError):
    pass
