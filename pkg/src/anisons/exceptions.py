"""Exception hierarchy shared by every module of the package."""


class AnisoError(Exception):
    """Base class for all package errors."""


class DimensionError(AnisoError, ValueError):
    """Array shape does not match the grid."""


class SingularMultiplierError(AnisoError, ValueError):
    """A Fourier multiplier is not finite at a nonzero grid mode."""


class MeaninglessNormError(AnisoError, ValueError):
    """A homogeneous norm was requested for data carrying mass where the weight is undefined."""


class InvalidIndexError(AnisoError, ValueError):
    """Lebesgue or Sobolev index outside its admissible range."""


class NormSpecError(AnisoError, ValueError):
    """Malformed norm specification string."""


class ResolutionError(AnisoError, ValueError):
    """Requested data cannot be represented on the grid."""


class BoxTooShortError(AnisoError, ValueError):
    """Box too short to contain a profile."""


class HypothesisViolationError(AnisoError, ValueError):
    """Input violates a spectral-support or divergence hypothesis."""


class CertificateViolationError(AnisoError, ValueError):
    """A per-mode decomposition inequality failed."""

    def __init__(self, message, mode=None, ratio=None):
        super().__init__(message)
        self.mode = mode
        self.ratio = ratio


class SolverError(AnisoError, RuntimeError):
    """Base class for time-integration failures."""


class CFLError(SolverError):
    def __init__(self, message, step, slice_index=None):
        super().__init__(message)
        self.step = step
        self.slice_index = slice_index


class BlowupSuspectedError(SolverError):
    def __init__(self, message, time, slice_index=None):
        super().__init__(message)
        self.time = time
        self.slice_index = slice_index


class TrajectoryError(AnisoError, ValueError):
    """Trajectories misaligned or not covering the requested time interval."""


class SweepFailedError(AnisoError, RuntimeError):
    """Fewer than four epsilon points survived a sweep."""


class ConfigError(AnisoError, ValueError):
    """Invalid configuration file or section."""
