"""Exception types shared across the package."""

from __future__ import annotations


class TgflowError(Exception):
    """Base class for all package errors."""


class ShapeError(TgflowError, ValueError):
    """Array shapes or ranks do not fit the operation."""


class ConfigError(TgflowError, ValueError):
    """Invalid configuration, unknown keys or an infeasible setting."""


class NumericError(TgflowError, ArithmeticError):
    """A non-finite value appeared where a finite one is required."""


class MissingInputError(TgflowError, FileNotFoundError):
    """A required input file (dataset, log, checkpoint) is absent."""


class ReportError(TgflowError):
    """Report generation cannot proceed, e.g. the reference cell is absent."""
