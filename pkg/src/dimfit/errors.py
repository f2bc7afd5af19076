"""Exception types shared across the package.

Recoverable per-record conditions (degenerate boxes, dropped tuples, filter
fallbacks, rewrite drift) are not exceptions: they are recorded as counted
warnings on the artifacts that observed them.
"""


class DimfitError(Exception):
    """Base class for all package errors."""


class SchemaError(DimfitError):
    """A structured input document is malformed or violates an invariant."""


class ConflictError(SchemaError):
    """Two taxonomy entries claim the same alias or canonical name."""


class UnknownDimension(DimfitError):
    """A dimension id does not resolve in the taxonomy."""


class InsufficientDimensions(DimfitError):
    """A record does not carry enough annotated dimensions to sample from."""


class TransportError(DimfitError):
    """A backend was unreachable after the configured retries."""


class BackendError(DimfitError):
    """A backend answered with a well-formed error payload."""


class ScoreOutOfRange(BackendError):
    """A live scorer returned a value outside [0, 1]; rejected, not clamped."""


class ParseError(DimfitError):
    """A model reply was not in the required structured format."""


class JudgeParseError(ParseError):
    """A validity-judge reply lacked a parsable Accuracy line."""


class EmptyCorpus(DimfitError):
    """An aggregate was requested over zero records."""


class EmptyBatch(DimfitError):
    """A batch statistic was requested over zero items."""


class ConfigError(DimfitError):
    """A run configuration is missing, malformed, or references absent paths."""


class ServiceError(DimfitError):
    """The engine service rejected a request."""
