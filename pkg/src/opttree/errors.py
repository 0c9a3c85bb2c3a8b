"""Exception hierarchy shared by all modules."""


class OptTreeError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(OptTreeError, ValueError):
    """Invalid hyperparameter or option combination."""


class DepthCapError(OptTreeError):
    """A split was requested beyond the configured per-dimension depth cap."""


class CodeParseError(OptTreeError, ValueError):
    """A region code string does not follow the grammar."""


class DataError(OptTreeError, ValueError):
    """Malformed sample data (NaN/Inf, empty input, bad CSV, corrupt file)."""


class ResourceError(OptTreeError):
    """A computation exceeded its time or memory budget."""


class IntegrityError(OptTreeError):
    """A fitted object violates one of its invariants (corrupt tree, bad mass)."""


class DegenerateSimplexError(OptTreeError, ValueError):
    """A simplex has zero volume."""


class ConvergenceError(OptTreeError):
    """An iterative solver stopped without meeting its tolerance.

    Attributes
    ----------
    best : ndarray
        Best iterate found.
    residual : float
        KKT residual at ``best``.
    """

    def __init__(self, message, best=None, residual=float("nan")):
        super().__init__(message)
        self.best = best
        self.residual = residual
