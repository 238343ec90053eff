"""Exception types. Each carries a machine-readable ``code`` used by the CLI."""


class UsimError(Exception):
    code = "E_USIM"


class InvalidData(UsimError, ValueError):
    code = "E_INVALID_DATA"


class ShapeMismatch(UsimError, ValueError):
    code = "E_SHAPE_MISMATCH"


class DegenerateInput(UsimError, ValueError):
    code = "E_DEGENERATE_INPUT"


class MissingLabels(UsimError, ValueError):
    code = "E_MISSING_LABELS"


class InvalidSpec(UsimError, ValueError):
    code = "E_INVALID_SPEC"


class DegenerateGrid(DegenerateInput):
    code = "E_DEGENERATE_GRID"


class ParseError(UsimError, ValueError):
    code = "E_PARSE"

    def __init__(self, message, line=None, offset=None):
        super().__init__(message)
        self.line = line
        self.offset = offset


class NonFiniteValue(UsimError, ValueError):
    code = "E_NON_FINITE"

    def __init__(self, message, row=None, col=None):
        super().__init__(message)
        self.row = row
        self.col = col


class ConvergenceFailure(UsimError, RuntimeError):
    """Raised when an iterative fit exhausts its budget.

    ``last`` holds the final (or best) iterate so callers can still use it.
    """

    code = "E_CONVERGENCE"

    def __init__(self, message, last=None):
        super().__init__(message)
        self.last = last
