"""Exception types shared across the package."""


class TwoWayError(Exception):
    """Base class for all package errors."""


class ConfigError(TwoWayError):
    """Invalid configuration, missing input file, or unusable option combination."""


class DataError(TwoWayError):
    """Input data violates a precondition (empty sets, disconnected designs, mismatched inputs)."""


class NumericalError(TwoWayError):
    """A numerical routine failed to converge or produced an unusable result."""


class CollinearCovariateError(DataError):
    """A covariate column is collinear with the worker and firm indicators.

    Detection is conservative: a column with no variation inside any
    (worker, firm) cell is rejected even when the cell-level values are not
    exactly additively decomposable.
    """

    def __init__(self, column_index: int, column_name: str):
        self.column_index = column_index
        self.column_name = column_name
        super().__init__(
            f"covariate column {column_index} ({column_name!r}) has no variation "
            f"within any (worker, firm) cell and cannot be separated from the "
            f"worker and firm effects"
        )
