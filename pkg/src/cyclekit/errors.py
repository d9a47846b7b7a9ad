"""Exception types shared across the package."""


class CycleKitError(Exception):
    """Base class for all cyclekit errors."""


class ParameterError(CycleKitError, ValueError):
    """Invalid argument or parameter combination."""


class BoundaryDegeneracyError(CycleKitError):
    """A zero (or image point) sits on the test circle within tolerance.

    Callers may retry with a slightly perturbed radius; membership in an
    open region is insensitive to such nudges.
    """


class RootFailureError(CycleKitError):
    """Root finding did not reach the target residual.

    The best iterate is attached so callers can inspect or salvage it.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class DivergenceError(CycleKitError):
    """A trajectory escaped the configured bound or went non-finite."""


class NonsmoothPointError(CycleKitError):
    """Jacobian requested where the map is not differentiable."""


class InvalidTransferError(CycleKitError):
    """The loop transfer function has a pole in the closed unit disk."""


class ResolutionError(CycleKitError):
    """Adaptive refinement exhausted its budget."""


class ExtractionError(CycleKitError):
    """A converged tail did not yield an acceptable cycle."""


class RefinementError(CycleKitError):
    """Newton polishing failed; callers keep the unrefined record."""
