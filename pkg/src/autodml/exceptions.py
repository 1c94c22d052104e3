"""Exception hierarchy shared across the package."""


class AutoDMLError(Exception):
    """Base class for all package errors."""


class SchemaError(AutoDMLError, ValueError):
    """A role binding or column reference does not match the data."""


class DataError(AutoDMLError, ValueError):
    """Input data could not be parsed or is invalid."""


class ConfigError(AutoDMLError, ValueError):
    """A run configuration failed validation.

    ``errors`` holds every violation found, not only the first.
    """

    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [errors]
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class NumericalError(AutoDMLError, ArithmeticError):
    """Base class for numerical failures during estimation."""


class DivergenceError(NumericalError):
    """Training produced a non-finite loss."""


class DegenerateWeightsError(NumericalError):
    """The residual-derivative weights carry (almost) no mass."""


class FoldError(NumericalError):
    """A per-fold learner failed; wraps the original error with the fold id."""

    def __init__(self, fold, error):
        self.fold = fold
        self.error = error
        super().__init__(f"fold {fold}: {type(error).__name__}: {error}")
