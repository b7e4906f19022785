"""Shared exception and warning types."""


class InputError(ValueError):
    """Raised when an operation receives dimensionally or semantically invalid input."""


class StageError(RuntimeError):
    """Raised when a pipeline stage cannot run on otherwise-valid inputs."""


class DegenerateInputWarning(UserWarning):
    """Emitted when an operation hits a degenerate case with a defined fallback value."""
