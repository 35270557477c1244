"""Exception hierarchy.

Two broad families matter downstream: validation problems (bad inputs,
violated preconditions) map to CLI exit code 1, numerical problems
(non-convergence, degenerate computations) map to exit code 2.
"""


class MetaInferError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(MetaInferError):
    """Invalid input data, schema, or operation preconditions."""


class SchemaError(ValidationError):
    """A required column or schema entry is missing or malformed."""


class ParseError(ValidationError):
    """A cell could not be parsed as a finite number.

    Carries the 1-based data row index in ``row``.
    """

    def __init__(self, message: str, row: int | None = None):
        super().__init__(message)
        self.row = row


class InsufficientDataError(ValidationError):
    """Too few estimates or studies for the requested operation."""


class RankDeficiencyError(ValidationError):
    """Design matrix is rank deficient; names the offending columns."""

    def __init__(self, message: str, columns: tuple[str, ...] = ()):
        super().__init__(message)
        self.columns = columns


class DomainError(ValidationError):
    """Parameter value outside its mathematical domain."""


class NumericalError(MetaInferError):
    """A numerical routine failed to produce a usable result."""


class ConvergenceError(NumericalError):
    """An iterative routine did not converge; carries its trace."""

    def __init__(self, message: str, trace: list | None = None):
        super().__init__(message)
        self.trace = trace if trace is not None else []


class DegenerateEnsembleError(NumericalError):
    """Every model in the ensemble has zero marginal likelihood."""


class BudgetError(NumericalError):
    """A sampling loop exceeded its configured draw budget."""
