"""Exception and warning types shared across the package."""


class AlassoError(Exception):
    """Base class for all errors raised by this package."""


class DataError(AlassoError):
    """Malformed or unusable input data (CSV parsing, shape, finiteness)."""


class SingularDesignError(AlassoError):
    """Design or moment matrix is rank deficient beyond the condition cap."""


class ConvergenceError(AlassoError):
    """An iterative solver failed and no usable result can be returned."""


class ConvergenceWarning(UserWarning):
    """Solver hit its iteration cap; the returned fit is flagged unconverged."""
