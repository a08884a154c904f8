"""Shared exception types for the workbench."""

from __future__ import annotations


class ConfigError(ValueError):
    """Raised when a configuration is malformed or inconsistent.

    The command line maps this to exit code 2.
    """


class NumericalFailure(ArithmeticError):
    """Raised when a computation produces NaN/Inf or otherwise diverges.

    The command line maps this to exit code 3.
    """


class DegenerateFadingError(NumericalFailure):
    """Raised when a fading coefficient is too close to zero to invert."""
