"""Exception types shared across the package."""


class GeometryError(ValueError):
    """Invalid domain specification or a geometric contract violation."""


class SolverError(RuntimeError):
    """Linear solve failed to reach the requested residual.

    Carries the final relative residual and the iteration count.
    """

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class TrajectoryEscapeError(RuntimeError):
    """A trajectory left the domain by more than one grid cell.

    ``seed_indices`` identifies the offending seeds.
    """

    def __init__(self, message, seed_indices=()):
        super().__init__(message)
        self.seed_indices = tuple(seed_indices)


class PicardConvergenceError(RuntimeError):
    """Picard iteration hit the iterate cap; ``trace`` holds the decay record."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class OuterIterationError(RuntimeError):
    """The outer fixed-point sweep did not converge within the iterate budget."""

    def __init__(self, message, window_index=None, metrics=()):
        super().__init__(message)
        self.window_index = window_index
        self.metrics = tuple(metrics)


class ConfigError(ValueError):
    """Bad run configuration; names the offending key and, when known, the line."""

    def __init__(self, message, key=None, line=None):
        super().__init__(message)
        self.key = key
        self.line = line
