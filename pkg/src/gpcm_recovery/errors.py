"""Exception hierarchy shared by the estimators, harness and CLI."""


class GpcmError(Exception):
    """Base class for all package errors."""


class InvalidInputError(GpcmError, ValueError):
    """Non-finite values, out-of-range categories, mismatched shapes."""


class DegenerateItemError(GpcmError):
    """An item whose responses all fall in a single category."""

    def __init__(self, item: int, category: int):
        self.item = item
        self.category = category
        super().__init__(f"item {item} has all responses in category {category}")


class SingularHessianError(GpcmError):
    pass


class NonConvergenceError(GpcmError):
    """MCMC retries exhausted with some PSRF still at or above the cutoff."""

    def __init__(self, worst_psrf: float, parameter: str, n_retries: int):
        self.worst_psrf = worst_psrf
        self.parameter = parameter
        self.n_retries = n_retries
        super().__init__(
            f"PSRF {worst_psrf:.4f} for {parameter} after {n_retries} retries"
        )


class DiagnosticError(GpcmError):
    """A convergence diagnostic is undefined, e.g. a chain that never moved."""


class FleishmanInfeasibleError(GpcmError):
    pass


class ParseError(GpcmError):
    """Malformed data file. ``row`` and ``col`` are 1-based body coordinates."""

    def __init__(self, message: str, row: int | None = None, col: int | None = None):
        self.row = row
        self.col = col
        where = ""
        if row is not None:
            where = f" (row {row}, col {col})" if col is not None else f" (row {row})"
        super().__init__(message + where)


class ConfigError(GpcmError):
    pass
