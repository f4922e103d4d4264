"""Exception types shared across the package."""


class WeakKamError(Exception):
    """Base class for all package errors."""


class NonConvergence(WeakKamError):
    """An iterative solve failed to reach its tolerance.

    Carries the best iterate so callers can inspect partial results.
    """

    def __init__(self, message, best=None, residual=None):
        super().__init__(message)
        self.best = best
        self.residual = residual


class NonTonelli(WeakKamError):
    """Hamiltonian failed a convexity or superlinearity probe."""


class DegenerateTime(WeakKamError):
    """Operation requested a non-positive duration."""


class EmptyProbe(WeakKamError):
    """Probe grid too coarse to estimate a constant."""


class DegenerateRadius(WeakKamError):
    """Superdifferential probe radius below the resolvable scale."""


class EmptySuperdifferential(WeakKamError):
    """Minimal energy selection called with an empty superdifferential."""


class StepTooLarge(WeakKamError):
    """Intrinsic step exceeds the admissible short-time bound."""


class AmbiguousMax(WeakKamError):
    """Two distant grid maximizers tie below the short-time bound.

    Signals a violated concavity step bound rather than a genuine tie.
    """


class SelectionFailure(WeakKamError):
    """Minimal energy selection did not converge."""


class SizeMismatch(WeakKamError):
    """Empirical measures with different support sizes."""


class ConfigError(WeakKamError):
    """Invalid experiment configuration; carries the offending field path."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class PipelineError(WeakKamError):
    """A pipeline stage failed; carries the stage name and cause."""

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
