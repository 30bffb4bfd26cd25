"""Exception types shared across the library."""


class QpdiagError(Exception):
    """Base class for all library-specific failures."""


class ConfigMismatchError(QpdiagError):
    """Two kernels with different lattice configurations were combined."""


class StripExceededError(QpdiagError):
    """A norm was requested at a wider strip than the kernel stores."""


class ScheduleError(QpdiagError):
    """Invalid iteration schedule (bad thetas, exhausted strip, overflow)."""


class SeriesDivergenceError(QpdiagError):
    """Exponential series tail cannot be certified below tolerance."""


class SeriesTruncationError(QpdiagError):
    """Conjugation series tail above tolerance at the configured order."""


class NotMonotoneError(QpdiagError):
    """Monotonicity estimate of a potential is non-positive at resolution."""


class MonotonicityBudgetError(QpdiagError):
    """Diagonal update would exhaust the monotonicity constant."""


class PoleProximityError(QpdiagError):
    """Evaluation point too close to a pole of the potential."""

    def __init__(self, msg, distance=None):
        super().__init__(msg)
        self.distance = distance


class DomainError(QpdiagError):
    """Operation applied outside its domain (e.g. non-self-adjoint input)."""


class ResonanceError(QpdiagError):
    """A resonant lattice vector was found during the Diophantine scan."""

    def __init__(self, msg, n=None):
        super().__init__(msg)
        self.n = n


class GridError(QpdiagError):
    """Sampling grid collides with a pole even after offsetting."""


class SolverBoundError(QpdiagError):
    """Homological solution violates its certified norm bound."""


class ResidualError(QpdiagError):
    """Sampled commutator residual above the solver tolerance."""


class NonContractionError(QpdiagError):
    """Adaptive iteration step failed to contract at the requested rate."""

    def __init__(self, msg, ratio=None):
        super().__init__(msg)
        self.ratio = ratio


class RegularityError(QpdiagError):
    """Requested weight exceeds what the kernel regularity supports."""


class PhaseExcludedError(QpdiagError):
    """Phase hits (or nearly hits) a pole translate and is inadmissible."""


class KernelFormatError(QpdiagError):
    """Malformed kernel or potential file."""
