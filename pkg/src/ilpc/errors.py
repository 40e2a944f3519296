"""Exception types shared across the package."""


class ILPCError(Exception):
    """Base class for all library errors."""


class FormatError(ILPCError):
    """Feature file violates its declared format."""


class PreprocessError(ILPCError):
    """A pre-processing step cannot be applied to the given features."""


class EpisodeSamplingError(ILPCError):
    """The source feature set cannot supply the requested episode."""


class SolverError(ILPCError):
    """Linear solver failed to reach the requested tolerance."""


class InfeasibleMarginalsError(ILPCError):
    """Sinkhorn marginal targets cannot be met due to the zero pattern."""


class TrainingError(ILPCError):
    """Classifier training produced a non-finite loss."""
