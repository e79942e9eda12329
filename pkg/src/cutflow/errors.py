"""Exception types shared across the package."""

from __future__ import annotations

__all__ = [
    "ConfigurationError",
    "CapacityError",
    "FlowDivergenceError",
    "EmptyEnsembleError",
]


class ConfigurationError(ValueError):
    """A run was configured inconsistently (bad family, odd filling, ...)."""


class CapacityError(ValueError):
    """Requested object would exceed a hard memory/size guard."""


class FlowDivergenceError(RuntimeError):
    """The flow integration produced NaN/overflow.

    Carries the last finite state so callers can inspect or salvage the
    partially converged result.
    """

    def __init__(self, message: str, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint


class EmptyEnsembleError(RuntimeError):
    """Every realization of an ensemble was dropped or failed."""
