"""Exception types raised across the package."""


class DFDError(Exception):
    """Base class for all package errors."""


class ParameterError(DFDError, ValueError):
    pass


class ShapeError(DFDError, ValueError):
    pass


class DegenerateROIError(DFDError, ValueError):
    pass


class DataError(DFDError, ValueError):
    pass


class CorruptionError(DFDError):
    """An on-disk artifact failed validation."""


class ConfigurationError(DFDError):
    pass
