"""Exception hierarchy shared across the package.

Two broad families matter to callers: bad inputs/configuration (the caller
can fix the request) and numerical degeneracies (the data or model is at
fault). The CLI maps the first family to exit code 1 and the second to 2.
"""


class EmTransferError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(EmTransferError):
    """An argument is malformed: non-finite values, bad shapes, bad ranges."""


class InvalidConfigurationError(InvalidInputError):
    """A requested model/training configuration cannot be satisfied by the data."""


class InvalidResultError(InvalidInputError):
    """An operation would produce an empty or meaningless result."""


class CsvParseError(InvalidInputError):
    """A CSV file could not be parsed; carries the offending line number."""

    def __init__(self, message, line_number):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class NumericalError(EmTransferError):
    """Base class for degeneracies discovered while computing."""


class DegenerateModelError(NumericalError):
    """A precision matrix has no usable eigenvalues under the active policy."""


class DegenerateEvaluationError(NumericalError):
    """Every mixture component assigns zero density to the query point."""


class DegenerateResponsibilityError(NumericalError):
    """A data point has zero posterior mass under every component."""

    def __init__(self, point_index, message=None):
        if message is None:
            message = (
                f"data point {point_index} has zero probability under every "
                "component (its label may be impossible under the model)"
            )
        super().__init__(message)
        self.point_index = point_index


class SingularSystemError(NumericalError):
    """A linear system is rank-deficient; retry with a positive ridge term."""
