"""Exception types shared across the package."""


class ReebflowError(Exception):
    """Base class for all library errors."""


class DegenerateCriticalError(ReebflowError):
    """A critical point has a Hessian eigenvalue below tolerance."""


class CriticalValueCollisionError(ReebflowError):
    """Two critical values are too close to resolve slab structure."""


class ResolutionTooCoarseError(ReebflowError):
    """Level-set component count changes under grid refinement."""


class NoReturnError(ReebflowError):
    """A contour trace failed to close within the step budget."""


class GridMismatchError(ReebflowError):
    """Two grid functions live on incompatible grids."""


class EmptyModeSetError(ReebflowError):
    """Noise sampler was configured with no spectral modes."""


class SolverDivergedError(ReebflowError):
    """An implicit solve produced non-finite values."""


class BlowUpError(ReebflowError):
    """Field norm exceeded the guard threshold (time step too large)."""


class FlatPeriodError(ReebflowError):
    """The rotation period is constant in z on some edge, so the
    pointwise-in-time convergence regime does not apply."""


class ConfigInvalidError(ReebflowError):
    """Run configuration failed validation; message names the key."""


class ExperimentFailedError(ReebflowError):
    """A requested experiment raised; message names the experiment."""
