"""Exception types shared across the package.

Everything raised on purpose derives from RingwatchError so callers (and the
CLI) can distinguish data problems from genuine bugs.
"""


class RingwatchError(Exception):
    """Base class for all errors raised deliberately by this package."""


class ParseError(RingwatchError):
    """A source file could not be decoded into records at all."""


class ValidationError(RingwatchError):
    """Decoded data violates a structural requirement."""


class ConfigError(RingwatchError):
    """A configuration object or parameter combination is unusable."""


class DomainError(RingwatchError):
    """An operation was asked about inputs outside its defined domain."""
