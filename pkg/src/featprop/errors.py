"""Exception hierarchy.

Every error carries a short ``category`` used by the command line to print a
single machine-parsable line.
"""


class FeatPropError(Exception):
    category = "error"


class ParameterError(FeatPropError, ValueError):
    category = "parameter"


class ShapeError(FeatPropError, ValueError):
    category = "shape"


class StageError(FeatPropError, ValueError):
    """Graph passed to an operation expecting a different pipeline stage."""

    category = "stage"


class EmptyGraphError(FeatPropError, ValueError):
    category = "empty-graph"


class DataError(FeatPropError, ValueError):
    """Input data violates an invariant (e.g. no known items to impute from)."""

    category = "data"


class FormatError(FeatPropError, ValueError):
    category = "format"


class TruncatedFileError(FormatError):
    category = "truncated"


class ParseError(FeatPropError, ValueError):
    category = "parse"

    def __init__(self, path, line_no, message):
        self.path = str(path)
        self.line_no = line_no
        super().__init__(f"{self.path}:{line_no}: {message}")


class SweepCellError(FeatPropError):
    category = "sweep"

    def __init__(self, method, rate, seed, cause):
        self.method = method
        self.rate = rate
        self.seed = seed
        self.cause = cause
        super().__init__(
            f"cell method={method} rate={rate!r} seed={seed} failed: "
            f"{type(cause).__name__}: {cause}"
        )
