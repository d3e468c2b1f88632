"""Exception types shared across the package."""


class InvalidParameterError(ValueError):
    """A parameter point lies outside the scheme's parameter domain."""


class SolverFailureError(RuntimeError):
    """An iterative solver stopped before reaching its tolerance."""

    def __init__(self, message, gap=float("nan")):
        super().__init__(f"{message} (last gap {gap:.3e})")
        self.gap = gap


class AssumptionViolation(ValueError):
    """Two sets of different colors are not separated (detector risk >= 1)."""


class CutInfeasibleError(ValueError):
    """No affine cut can discard the requested region without discarding the whole body."""


class InputError(ValueError):
    """Malformed input to a test (wrong sample length, point outside every body...)."""


class BuildError(RuntimeError):
    """The sequential test could not be assembled."""


class ConfigError(ValueError):
    """Bad experiment configuration."""


class UnsupportedOperation(ValueError):
    """The operation is not defined for this observation scheme or body."""
