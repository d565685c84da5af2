"""Exception hierarchy shared across the package."""


class BondMLError(Exception):
    """Base class for all package errors."""


class SchemaError(BondMLError, ValueError):
    """Input columns do not match the bond-trade schema."""


class DataError(BondMLError, ValueError):
    """A record violates a field invariant.

    ``row`` is the 1-based data row number (header excluded) when known.
    """

    def __init__(self, message: str, row: int | None = None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class NumericalError(BondMLError, ArithmeticError):
    """A fit diverged, produced non-finite values, or hit a degenerate system."""
