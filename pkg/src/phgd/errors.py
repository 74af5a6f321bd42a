"""Exception types raised across the package."""


class PhgdError(Exception):
    """Base class for all package errors."""


class ShapeMismatch(PhgdError, ValueError):
    pass


class IterationLimit(PhgdError, RuntimeError):
    pass


class ResampleLimit(PhgdError, RuntimeError):
    pass


class DomainViolation(PhgdError, ValueError):
    pass


class NonFiniteIterate(PhgdError, FloatingPointError):
    pass


class NotSeparable(PhgdError, ValueError):
    pass


class DerivativeVanished(PhgdError, ZeroDivisionError):
    pass


class MissingRecording(PhgdError, ValueError):
    pass


class ConfigError(PhgdError, ValueError):
    pass


class ParseError(ConfigError):
    pass


class ValidationError(ConfigError):
    pass


class IoError(PhgdError, OSError):
    pass
