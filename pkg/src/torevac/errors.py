"""Exception hierarchy shared by all torevac modules."""


class TorevacError(Exception):
    """Base class for every error raised by the package."""


class MeasurementError(TorevacError, ValueError):
    """Malformed or invalid boundary measurements."""


class ConfigError(TorevacError, ValueError):
    """Invalid run configuration."""


class MeshError(TorevacError):
    """Mesh generation or validity failure."""


class InvertedElementError(MeshError):
    """A deformation produced a triangle with non-positive area."""

    def __init__(self, message, triangle=None):
        super().__init__(message)
        self.triangle = triangle


class SolverError(TorevacError):
    """Linear solve failed or did not reach the residual tolerance."""


class BepError(TorevacError):
    """Bounded extremal problem could not be solved as posed."""


class SaturationError(BepError):
    """No Lagrange parameter in the search bracket saturates the bound."""


class StagnationError(TorevacError):
    """Line search found no acceptable step."""


class LevelSetError(TorevacError):
    """Level set extraction did not produce exactly one closed loop."""
