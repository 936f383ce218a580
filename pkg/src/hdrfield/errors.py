class DataError(ValueError):
    """Malformed or inconsistent input data (files, manifests, shapes)."""


class NumericError(ArithmeticError):
    """A computation produced non-finite values or failed to converge."""
