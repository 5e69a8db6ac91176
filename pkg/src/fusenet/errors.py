"""Exception types raised across the package."""


class FusenetError(Exception):
    """Base class for all package errors."""


class ShapeError(FusenetError, ValueError):
    pass


class ValidationError(FusenetError, ValueError):
    pass


class NumericError(FusenetError, ArithmeticError):
    pass


class FormatError(FusenetError, ValueError):
    """Malformed checkpoint or manifest file."""


class ConfigError(FusenetError, ValueError):
    pass


class ImageReadError(FusenetError, OSError):
    """An input image could not be read or decoded."""
