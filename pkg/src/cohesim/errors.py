"""Shared exception types mapped to CLI exit codes."""


class ConfigError(ValueError):
    """Invalid run configuration or mesh specification (CLI exit 2)."""


class StepFailureError(RuntimeError):
    """An incremental minimization step failed to converge (CLI exit 3)."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class StateCorruptionError(RuntimeError):
    """A stored trajectory violates a structural invariant (negative or
    non-monotone history slip, slip above history)."""
