"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class L3AEError(Exception):
    exit_code = 1


class ParameterError(L3AEError, ValueError):
    """Bad hyperparameter, option or configuration value."""

    exit_code = 1


class DataError(L3AEError, ValueError):
    """Input data is malformed, misaligned or empty."""

    exit_code = 2


class SolverError(L3AEError, ArithmeticError):
    """A closed-form solve failed or was refused."""

    exit_code = 3
