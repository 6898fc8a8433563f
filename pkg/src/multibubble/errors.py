"""Exception types shared across the package."""


class MultibubbleError(Exception):
    """Base class for all package-specific errors."""


class PointOutsideDomain(MultibubbleError):
    pass


class OutsideCollar(MultibubbleError):
    """Point is too far from the boundary for projection/reflection."""


class DegeneratePoint(MultibubbleError):
    pass


class CoincidentPoints(MultibubbleError):
    pass


class PointAtSource(MultibubbleError):
    pass


class InvalidConfiguration(MultibubbleError):
    """Candidate point tuple violates the admissibility constraints."""


class SolverDiverged(MultibubbleError):
    pass


class NoSplitting(MultibubbleError):
    """The requested point count cannot be distributed over the sources."""


class IntegerWeightObstruction(MultibubbleError):
    """A source weight equals one of the forbidden integers 1..N-1."""

    def __init__(self, source_index, alpha, n_points):
        self.source_index = source_index
        self.alpha = alpha
        self.n_points = n_points
        super().__init__(
            f"weight alpha={alpha} of source #{source_index} is an integer in "
            f"{{1,...,{n_points - 1}}}; no admissible splitting exists"
        )


class IterationLimit(MultibubbleError):
    pass


class EscapedDomain(MultibubbleError):
    pass


class ZeroGradientSpurious(MultibubbleError):
    """Gradient-norm descent stalled above tolerance away from a critical point."""


class GridTooCoarse(MultibubbleError):
    pass


class NewtonDiverged(MultibubbleError):
    pass


class OverflowInExp(MultibubbleError):
    pass


class QuadratureOverflow(MultibubbleError):
    pass


class OverlappingBalls(MultibubbleError):
    pass


class TestPointTooClose(MultibubbleError):
    pass
