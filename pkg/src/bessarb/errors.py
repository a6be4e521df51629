"""Exception hierarchy shared across the package.

Each class maps to a distinct CLI exit code and HTTP status, see cli.py
and service/app.py.
"""


class BessArbError(Exception):
    """Base class for all package errors."""


class InputError(BessArbError):
    """Malformed or inconsistent user input (prices, configs, arguments)."""


class GridMismatchError(BessArbError):
    """Structurally incompatible time grids (lengths, step sizes, days)."""


class InfeasibleError(BessArbError):
    """The dispatch program has no feasible point."""

    def __init__(self, message: str, binding_constraint: str):
        super().__init__(message)
        self.binding_constraint = binding_constraint


class InstanceTooLargeError(BessArbError):
    """The enumeration oracle refuses instances beyond its guard rails."""


class DataMissingError(BessArbError):
    """A required price series or tick file is absent for a day."""


class SchemaError(BessArbError):
    """A CSV file does not match the expected schema."""


class UnknownStrategyError(BessArbError):
    """A strategy identifier could not be parsed."""
