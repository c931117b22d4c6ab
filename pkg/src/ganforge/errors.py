"""Exception hierarchy.

Every error raised deliberately by ganforge derives from :class:`GanForgeError`,
and the CLI maps the subclasses onto its exit codes.
"""


class GanForgeError(Exception):
    """Base class for all ganforge errors."""


class ShapeError(GanForgeError, ValueError):
    """Tensor extents do not agree with what an operation requires."""


class GeometryError(ShapeError):
    """A convolution or network ladder cannot produce a valid spatial extent."""


class DomainError(GanForgeError, ValueError):
    """Input lies outside the mathematical domain of an operation."""


class NumericError(GanForgeError, ArithmeticError):
    """A NaN or infinity appeared where only finite values are allowed."""


class TraceError(GanForgeError, RuntimeError):
    """A tensor was not recorded on the tape it was differentiated against."""


class CoverageError(GanForgeError, KeyError):
    """A gradient map does not cover every parameter being updated."""

    def __str__(self) -> str:  # KeyError would otherwise repr() the message
        return str(self.args[0]) if self.args else ""


class StatisticsError(GanForgeError, ValueError):
    """Too few samples to estimate the requested statistics."""


class NotPSDError(GanForgeError, ValueError):
    """Matrix is not (numerically) symmetric positive semidefinite."""


class DatasetError(GanForgeError, OSError):
    """Dataset directory missing, empty, or entirely undecodable."""


class CheckpointError(GanForgeError, ValueError):
    """Checkpoint container is corrupt or of an unsupported version."""


class ConfigError(GanForgeError, ValueError):
    """Invalid configuration value or inconsistent parameter set."""
