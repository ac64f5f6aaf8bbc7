"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Tensor shapes do not satisfy an operation's contract."""


class DomainError(ValueError):
    """Input value outside an operation's mathematical domain."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration value."""


class ParseError(ValueError):
    """Malformed record in an input file; message names line and field."""

    def __init__(self, message, line=None, field=None):
        super().__init__(message)
        self.line = line
        self.field = field


class DegenerateSequenceError(ValueError):
    """Sequence geometry makes the requested preprocessing ill-defined."""


class TrainingError(RuntimeError):
    """Training aborted; message carries the diagnostic."""


class CheckpointError(ValueError):
    """Checkpoint file is missing, malformed, or shape-inconsistent."""
