"""Typed errors shared across the package.

The CLI maps these onto process exit codes: configuration/validation
problems exit 2, numeric failures exit 3, file/format problems exit 4.
"""


class ConfigurationError(ValueError):
    """Invalid configuration, dimensions, or argument combination."""


class BoundsError(IndexError):
    """Slice or subset request outside the valid index range."""


class ProtocolError(RuntimeError):
    """A contract between pipeline stages was broken (e.g. a training epoch
    that did not cover every example exactly once)."""


class NumericError(ArithmeticError):
    """Non-finite values where finite ones are required."""


class StateError(RuntimeError):
    """Operation invoked on state that cannot serve it (e.g. empty queue)."""


class FormatError(ValueError):
    """Malformed on-disk data; the message names the offending field."""


class DataError(ValueError):
    """Dataset content violates its own declared invariants."""
