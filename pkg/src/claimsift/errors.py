"""Exception taxonomy shared across the package."""

from __future__ import annotations


class ClaimsiftError(Exception):
    """Base class for package errors."""


class DatasetError(ClaimsiftError):
    """A dataset file or record violates the corpus schema."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConfigError(ClaimsiftError):
    """A configuration value is missing, malformed, or inconsistent."""


class ParseError(ClaimsiftError):
    """A model response contains no recognizable label."""

    def __init__(self, message: str, raw: str = ""):
        super().__init__(message)
        self.raw = raw


class AnnotatorError(ClaimsiftError):
    """An annotation backend failed after exhausting retries."""


class EmbedError(ClaimsiftError):
    """An embedding backend failed or returned a malformed vector."""


class StateError(ClaimsiftError):
    """State assembly received vectors of inconsistent width."""


class PolicyError(ClaimsiftError):
    """Policy evaluation or update received malformed inputs."""


class CheckpointError(ClaimsiftError):
    """A checkpoint file is missing, corrupt, or from an unsupported version."""


class RewardError(ClaimsiftError):
    """Reward computation received malformed distributions."""


class PoolExhausted(ClaimsiftError):
    """A sampler has no remaining candidates."""


class EmptyEvaluation(ClaimsiftError):
    """Evaluation was requested on an empty instance set."""
