"""
Exception types. Each family maps to one CLI exit code.
"""


class AnticipationError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(AnticipationError, ValueError):
    """Invalid or inconsistent configuration."""

    exit_code = 2


class DataError(AnticipationError, ValueError):
    """Invalid input data: labels out of range, bad shapes, broken files."""

    exit_code = 3


class ManifestError(DataError):
    """A manifest or feature store failed validation."""


class DegenerateColumnError(DataError):
    """An action column of the co-occurrence matrix has no counts and no smoothing."""

    def __init__(self, action_id: int):
        super().__init__(f"action {action_id} never co-occurs with any goal "
                         f"(zero-count column with smoothing_epsilon = 0)")
        self.action_id = action_id


class CheckFailure(AnticipationError, RuntimeError):
    """A numerical self-check (e.g. finite-difference gradients) failed."""

    exit_code = 4
