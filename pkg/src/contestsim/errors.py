"""Exception types shared across the package."""

from __future__ import annotations


class ContestError(Exception):
    """Base class for all package-specific failures."""


class ConfigurationError(ContestError):
    """Invalid configuration, profile, or input data."""


class DegenerateDataError(ContestError):
    """Input data cannot support the requested computation."""


class ContractViolation(ContestError):
    """An internal consistency check failed (a bug, not a user error)."""
