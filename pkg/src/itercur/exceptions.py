"""Exception hierarchy shared by all modules."""


class ItercurError(Exception):
    """Base class for errors raised by itercur."""


class DimensionError(ItercurError, ValueError):
    """Operand shapes do not agree."""


class MatrixMarketError(ItercurError, ValueError):
    """A Matrix Market file could not be parsed or is unsupported."""


class SizeCapError(ItercurError, MemoryError):
    """An explicit dense array would exceed the configured size cap."""


class RankDeficiencyError(ItercurError, ValueError):
    """A factor that must have full column rank does not.

    Attributes
    ----------
    factor : str
        Name of the offending factor, e.g. ``"C"`` or ``"R"``.
    """

    def __init__(self, factor, message=None):
        self.factor = factor
        super().__init__(message or f"{factor} is numerically rank deficient")


class SingularSelectionError(ItercurError, ValueError):
    """The interpolation system of an index-selection step is singular.

    ``step`` is 1-based, matching the column of the singular-vector block
    being processed when the breakdown was detected.
    """

    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"singular interpolation system at step {step}")


class ConvergenceError(ItercurError, RuntimeError):
    """An iterative routine failed to reach its tolerance."""

    def __init__(self, message, diagnostics=None):
        self.diagnostics = diagnostics or {}
        super().__init__(message)
