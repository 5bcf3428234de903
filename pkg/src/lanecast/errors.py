"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Array shapes violate an operation's contract."""


class DataError(Exception):
    """Input data (CSV records, bundles, ranges) is malformed or unusable."""


class MetricError(DataError):
    """A metric is undefined for the given inputs (e.g. every value excluded)."""


class ConfigError(Exception):
    """A configuration file or parameter set is invalid."""


class NumericError(ArithmeticError):
    """Training or evaluation produced non-finite numbers."""
