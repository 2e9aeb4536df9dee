"""Exception types raised across the package."""


class TimeMixerError(Exception):
    """Base class for package errors."""


class ShapeError(TimeMixerError, ValueError):
    """Operand shapes are incompatible."""


class ConfigError(TimeMixerError, ValueError):
    """A configuration or experiment spec is invalid."""


class DataError(TimeMixerError, ValueError):
    """Input data cannot be parsed or split as requested."""


class MetricError(TimeMixerError, ValueError):
    """A metric is undefined for the given input."""


class TrainingDivergedError(TimeMixerError, RuntimeError):
    """Training produced a non-finite loss."""
