"""Exception hierarchy shared by all pipeline stages."""


class LockInError(Exception):
    """Base class for every error raised by :mod:`lockin`."""


class SingularDenominator(LockInError):
    """``mu - nu^T x`` is (numerically) zero."""


class ModelInvalid(LockInError):
    pass


class NotHurwitz(ModelInvalid):
    pass


class GaugeInfeasible(LockInError):
    pass


class NoConvergence(LockInError):
    """Newton iteration exceeded its cap without meeting the tolerance."""


class WrongBranch(LockInError):
    """Newton converged to a KKT point whose multiplier has the wrong sign."""


class StepFailure(LockInError):
    pass


class IndexViolation(LockInError):
    """Algebraic Jacobian is singular, the DAE is not index 1 here."""


class NoCycle(LockInError):
    pass


class EmptyFamily(LockInError):
    pass


class SensitivityDiverged(LockInError):
    pass


class GradientDegenerate(LockInError):
    pass


class OutOfRange(LockInError):
    pass


class NoExtension(LockInError):
    pass


class GridExhausted(LockInError):
    pass


class ArtifactInvalid(LockInError):
    """A stored artifact is malformed."""
