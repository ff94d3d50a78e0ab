"""Exception types shared across the package."""

from __future__ import annotations


class ContractViolation(ValueError):
    """An operation was called with inputs outside its documented contract."""


class ConfigError(ValueError):
    """A configuration value is missing, malformed or out of range.

    ``field`` names the offending key (``section.key`` for config files).
    """

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class ConvergenceError(RuntimeError):
    """An iterative solver hit its iteration cap before meeting tolerance.

    The best iterate found is kept on ``best`` so callers can inspect it.
    """

    def __init__(self, message: str, best=None):
        super().__init__(message)
        self.best = best


class DivergenceError(RuntimeError):
    """The simulated parameters became non-finite or blew past the norm guard."""
