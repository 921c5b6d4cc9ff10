"""Exception hierarchy shared across the package.

Grouped by the CLI exit code they map to: configuration problems exit 2,
run-failure thresholds exit 3, IO problems exit 4.
"""

from __future__ import annotations


class EdgeLLMError(Exception):
    """Base class for all errors raised by this package."""


# --- configuration / input validation (exit code 2) ---

class ConfigError(EdgeLLMError):
    """A configuration document or fixture file is unusable."""


class ConfigSyntax(ConfigError):
    pass


class DuplicateModel(ConfigError):
    pass


class ClassMismatch(ConfigError):
    """Declared size class contradicts the parameter count."""


class IncompleteEndpoint(ConfigError):
    """Backend endpoint is missing the field its kind requires."""


class InvalidParamCount(ConfigError, ValueError):
    pass


class DatasetError(ConfigError):
    pass


class DatasetSyntax(DatasetError):
    def __init__(self, message: str, line_number: int | None = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class DuplicateConversation(DatasetError):
    pass


class EmptyPrompt(DatasetError):
    pass


class MalformedItem(ConfigError):
    """A multiple-choice item violates the one-blank/two-options shape."""


# --- request routing and gateway errors ---

class ModelNotFound(EdgeLLMError, KeyError):
    pass


class InvalidChatRequest(EdgeLLMError, ValueError):
    pass


class ContextOverflow(EdgeLLMError):
    """Assembled prompt exceeds the model's configured context window."""


class ClockSkew(EdgeLLMError):
    """Timestamps arrived out of order; phase timings cannot be derived."""


# --- backend adapter errors ---

class BackendUnavailable(EdgeLLMError):
    pass


class ProtocolError(EdgeLLMError):
    """Backend response violated the expected wire shape."""


class CapabilityMissing(EdgeLLMError):
    """Backend does not support the requested operation (e.g. scoring)."""


class Cancelled(EdgeLLMError):
    pass


# --- metric computation errors ---

class MetricsError(EdgeLLMError, ValueError):
    pass


class NonPositiveDuration(MetricsError):
    pass


class EmptyPhase(MetricsError):
    pass


class DegenerateTiming(MetricsError):
    pass


class EmptySample(MetricsError):
    pass


class NonFiniteInput(MetricsError):
    pass


class ZeroMeanCV(MetricsError):
    pass


# --- resource monitoring errors ---

class TargetGone(EdgeLLMError):
    """Monitored process no longer exists."""


class InvalidMetricName(EdgeLLMError, ValueError):
    pass


# --- run orchestration (exit code 3) and IO (exit code 4) ---

class ModelRunFailed(EdgeLLMError):
    """More than half of a model's records failed during replay.

    Carries the records collected so far so callers can still emit a
    diagnosable report.
    """

    def __init__(self, failed_models: list[str], records: list | None = None):
        super().__init__(
            "run failure threshold exceeded for: " + ", ".join(failed_models)
        )
        self.failed_models = failed_models
        self.records = records or []


class IoError(EdgeLLMError):
    """Report or record files could not be written/read."""
