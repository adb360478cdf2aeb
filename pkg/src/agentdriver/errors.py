"""Exception hierarchy shared by every module in the package."""

from __future__ import annotations


class AgentDriverError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(AgentDriverError):
    """A file or payload could not be parsed at all."""


class ValidationError(AgentDriverError):
    """A parsed structure violates an invariant; the message names the field."""

    def __init__(self, field: str, reason: str = ""):
        self.field = field
        self.reason = reason
        msg = field if not reason else f"{field}: {reason}"
        super().__init__(msg)


class DegenerateRange(AgentDriverError):
    """Rectangle bounds inverted or empty."""


class UnknownObject(AgentDriverError):
    """An object id that is not present in the scene's detections."""


class BadTimestep(AgentDriverError):
    """Timestep outside the 1..6 planning horizon."""


class UnknownLayer(AgentDriverError):
    """Map layer name not one of drivable/lane_category/shoulder/divider."""


class UnknownTool(AgentDriverError):
    """Tool name not present in the registry."""


class ArgumentError(AgentDriverError):
    """Tool-call arguments do not validate against the tool's schema."""


class EmptyStore(AgentDriverError):
    """Retrieval requested against an experience store with no records."""


class LengthMismatch(AgentDriverError):
    """Key vector length does not match the store's configured split."""


class BackendUnavailable(AgentDriverError):
    """LLM backend could not be reached or kept failing after retries."""


class ResponseMalformed(AgentDriverError):
    """LLM backend returned a payload that does not parse."""


class ScriptExhausted(AgentDriverError):
    """Scripted or replay backend ran out of replies."""


class ReplayDivergence(AgentDriverError):
    """Replayed request differs from the recorded one; message carries a diff."""


class DecodeError(AgentDriverError):
    """Trajectory text did not decode; records what was found."""

    def __init__(self, message: str, pairs_found: int, bad_token: str | None = None):
        self.pairs_found = pairs_found
        self.bad_token = bad_token
        super().__init__(message)


class MissingGroundTruth(AgentDriverError):
    """Scene lacks the ground-truth trajectory required by the operation."""


class UnknownCategory(AgentDriverError):
    """Ground-truth box category not in the known vocabulary."""


class EmptySet(AgentDriverError):
    """Metric aggregation over zero samples."""
