"""Exception types raised by the library."""


class UnimapError(Exception):
    """Base class for all library errors."""


class DomainError(UnimapError):
    """A coordinate lies outside the map or basis domain."""


class SingularJacobianError(UnimapError):
    """The map Jacobian is zero (or numerically indistinguishable from zero)."""


class NotInImageError(UnimapError):
    """The requested point is not in the image of the map domain."""


class NonMonotoneError(UnimapError):
    """The map Jacobian changes sign on the domain."""


class DegenerateMapError(UnimapError):
    """X(x) - x vanishes identically on the scan grid (every point is fixed)."""


class OrbitEscapedError(UnimapError):
    """An orbit left the domain. Carries the step index of the escape."""

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


class KindError(UnimapError):
    """Operation requires a different basis kind (spatial vs Fourier)."""


class QuadratureError(UnimapError):
    """Quadrature subdivision exceeded its hard limit."""


class NotNearIdentityError(UnimapError):
    """Generator-route unitarization requires a near-identity matrix."""


class InsufficientZeroRowsError(UnimapError):
    """The zero-row pool cannot square up every block. Carries the row deficit."""

    def __init__(self, message: str, deficit: int):
        super().__init__(message)
        self.deficit = deficit


class StageError(UnimapError):
    """A propagator at the wrong pipeline stage was supplied."""


class WidthError(UnimapError):
    """Initial Gaussian width too small to span several grid cells."""


class NoPeaksError(UnimapError):
    """Measured histogram is consistent with a flat distribution."""


class LengthMismatchError(UnimapError):
    """Trajectory sequences differ in horizon or dimension."""


class ConfigError(UnimapError):
    """Invalid run configuration. Carries the offending key."""

    def __init__(self, key: str, message: str):
        super().__init__(f"config key '{key}': {message}")
        self.key = key


class PipelineError(UnimapError):
    """A pipeline stage failed. Wraps the original module error."""
