"""Exception hierarchy shared across the package.

Exit codes used by the CLI: 0 success, 2 config error, 3 data error,
4 numeric divergence.
"""


class PafForgeError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(PafForgeError):
    """Invalid configuration (bad value, unknown key, missing field)."""

    exit_code = 2


class DataError(PafForgeError):
    """Malformed input data (catalog file, IDX, CSV, checkpoint)."""

    exit_code = 3


class UnknownPafError(DataError, KeyError):
    """Lookup of a PAF name that is not in the catalog."""

    def __str__(self):  # KeyError quotes its message otherwise
        return PafForgeError.__str__(self)


class DomainError(PafForgeError):
    """Evaluation requested outside the function's domain (e.g. non-finite input)."""


class DivergenceError(PafForgeError):
    """Training or tuning reached a non-finite loss.

    Carries the last finite state so callers can inspect or recover it.
    """

    exit_code = 4

    def __init__(self, message, last_state=None, epoch=None):
        super().__init__(message)
        self.last_state = last_state
        self.epoch = epoch
