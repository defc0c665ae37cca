"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration value or flag combination."""


class LayoutError(ValueError):
    """Parameter layout is malformed or does not match expectations."""


class DataError(ValueError):
    """Malformed or inconsistent dataset / checkpoint files."""


class BadMagicError(DataError):
    """File does not start with the expected magic number."""


class TruncatedFileError(DataError):
    """File is shorter than its header promises."""


class CountMismatchError(DataError):
    """Image and label files disagree on the number of examples."""


class DivergenceError(ArithmeticError):
    """Training produced a non-finite loss or parameter update."""


class NumericError(ArithmeticError):
    """A numeric postcondition failed (non-finite or non-positive variance, ...)."""
