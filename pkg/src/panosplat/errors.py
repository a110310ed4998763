"""Exception types shared across the package."""


class PanosplatError(Exception):
    """Base class for package errors."""


class DomainError(PanosplatError, ValueError):
    """An argument violates an operation's documented domain."""


class MissingCaptionError(PanosplatError, KeyError):
    """A clip has no usable caption in its sidecar metadata."""


class ColmapParseError(PanosplatError, ValueError):
    """A COLMAP sparse-model text file is malformed.

    Carries the offending file and line number in the message.
    """

    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = str(path)
        self.line_no = line_no


class TrainingError(PanosplatError, RuntimeError):
    """The training loop hit a non-finite loss or similar failure."""


class ReconstructionError(PanosplatError, RuntimeError):
    """Splat optimization diverged; carries the last valid checkpoint."""

    def __init__(self, message, last_valid=None):
        super().__init__(message)
        self.last_valid = last_valid


class WorkspaceError(PanosplatError, RuntimeError):
    """A pipeline stage is missing its required workspace inputs."""


class MetricError(PanosplatError, ValueError):
    """A metric is undefined for the given record or inputs."""
