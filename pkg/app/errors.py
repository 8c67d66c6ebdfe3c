"""
Exception hierarchy shared by the kernel, the services and the CLI.

Library code raises these; only the command layer turns them into exit codes.
"""


class DFormerLabError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(DFormerLabError, ValueError):
    """Operand dimensions do not agree (matmul inner dims, channel counts, prior shapes)."""


class ShapeError(DFormerLabError, ValueError):
    """A spatial size is not compatible with a pooling/stride/patch requirement."""


class ParameterError(DFormerLabError, ValueError):
    """A scalar hyperparameter is out of its allowed range."""


class DomainError(DFormerLabError, ValueError):
    """An input value lies outside the mathematical domain of the operation."""


class DataError(DFormerLabError, ValueError):
    """Labels or other data values are invalid."""


class UsageError(DFormerLabError, RuntimeError):
    """An API was called in a way its contract forbids (e.g. backward on a non-scalar)."""


class NetpbmError(DataError):
    """Base class for PPM/PGM parse errors; always names the file."""

    def __init__(self, path, message):
        self.path = str(path)
        super().__init__(f"{self.path}: {message}")


class NetpbmHeaderError(NetpbmError):
    pass


class NetpbmDimensionError(NetpbmError):
    pass


class NetpbmTruncatedError(NetpbmError):
    pass


class ConfigError(DFormerLabError, ValueError):
    """A configuration file or value is malformed or inconsistent."""


class CheckpointError(DFormerLabError, ValueError):
    """A checkpoint file is malformed or does not match the model."""


class TrainingDivergedError(DFormerLabError, RuntimeError):
    """The training loss became NaN or infinite."""
