"""Exception hierarchy shared across the package."""


class MetamorphError(Exception):
    """Base class for all package-specific errors."""


class DomainError(MetamorphError):
    """An evaluation point lies outside the closed unit square."""


class SingularMatrixError(MetamorphError):
    """A 2x2 Jacobian is numerically singular."""


class SolverError(MetamorphError):
    """Sparse SPD solve failed its residual contract or hit a bad pivot."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class DegenerateDeformationError(MetamorphError):
    """det(D phi) dropped below the diffeomorphism guard at a quadrature point."""

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class NonConvergenceError(MetamorphError):
    """An iterative solver hit its cap; carries the last iteration difference."""

    def __init__(self, message, last_diff=None, partial=None):
        super().__init__(message)
        self.last_diff = last_diff
        self.partial = partial


class InversionError(MetamorphError):
    """A query point is covered by no deformed grid cell (fold-over)."""


class DimensionError(MetamorphError):
    """An input image is not a (2^M + 1) square; carries the nearest valid size."""

    def __init__(self, message, nearest_valid=None):
        super().__init__(message)
        self.nearest_valid = nearest_valid


class FormatError(MetamorphError):
    """Unsupported or corrupt file format."""


class ConfigError(MetamorphError):
    """Malformed run configuration."""
