"""Exception hierarchy shared by all solver modules."""


class SolverError(Exception):
    """Base class for every error raised by :mod:`spfp`."""


class InvalidArgumentError(SolverError, ValueError):
    """An argument is outside its admissible range or has the wrong shape."""


class SingularMomentError(SolverError, ZeroDivisionError):
    """A normalized moment was requested for a density with zero mass."""


class VanishingDiffusionError(SolverError):
    """The diffusion coefficient vanishes where the quadrature needs 1/D."""


class QuadratureError(SolverError):
    """The integrand was not finite at a quadrature node.

    ``edge`` is the index ``i`` of the cell ``[w_i, w_{i+1}]`` (or ``None``).
    """

    def __init__(self, message, edge=None):
        super().__init__(message)
        self.edge = edge


class PositivityRequiredError(SolverError, ValueError):
    """A strictly positive density was required (logarithms of it are taken)."""


class StabilityError(SolverError):
    """The implicit system lost its M-matrix structure for the requested step."""

    def __init__(self, message, rows=None):
        super().__init__(message)
        self.rows = rows


class ConvergenceError(SolverError):
    """An iteration did not reach its tolerance within the iteration budget."""

    def __init__(self, message, last_distance=None, iterations=None):
        super().__init__(message)
        self.last_distance = last_distance
        self.iterations = iterations


class ConfigError(SolverError, ValueError):
    """A run configuration failed validation. ``path`` names the offending key."""

    def __init__(self, message, path=None):
        super().__init__(message if path is None else f"{path}: {message}")
        self.path = path
