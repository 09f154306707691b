"""Exception types shared across the package."""


class MlopError(Exception):
    """Base class for all library errors."""


class ConfigError(MlopError):
    """Invalid configuration value or combination."""


class CloudFormatError(MlopError):
    """Malformed point-cloud file; message carries row/column location."""


class DegenerateSketchError(MlopError):
    """Sketch construction hit a rank-deficient projection basis."""

    def __init__(self, requested: int, achieved: int):
        self.requested = requested
        self.achieved = achieved
        super().__init__(
            f"sketch basis is rank deficient: requested {requested} columns, "
            f"achieved rank {achieved}; retry with a smaller sketch dimension"
        )


class UnreachableSupportError(MlopError):
    """No admissible radius multiplier covers every reconstruction point."""


class CoincidentPointsError(MlopError):
    """Two reconstruction points collapsed below the repulsion guard distance."""


class NumericalAbortError(MlopError):
    """Solver produced a non-finite quantity; carries the iteration index."""

    def __init__(self, iteration: int, detail: str):
        self.iteration = iteration
        super().__init__(f"numerical abort at iteration {iteration}: {detail}")
