"""Error types shared across the solver, analysis and training layers."""


class CPLRNNError(Exception):
    """Base class; ``code`` is a stable machine-readable identifier."""

    code = "CPLRNN_ERROR"

    def __init__(self, message: str = "", **context):
        super().__init__(message or self.code)
        self.context = context


class DivisionByZeroInterval(CPLRNNError):
    code = "DIVISION_BY_ZERO_INTERVAL"


class TooWide(CPLRNNError):
    code = "TOO_WIDE"


class SingularRegionMatrix(CPLRNNError):
    code = "SINGULAR_REGION_MATRIX"


class NearDefective(CPLRNNError):
    code = "NEAR_DEFECTIVE"


class ImaginaryResidue(CPLRNNError):
    code = "IMAGINARY_RESIDUE"


class SearchInconclusive(CPLRNNError):
    code = "SEARCH_INCONCLUSIVE"


class DegenerateGradient(CPLRNNError):
    code = "DEGENERATE_GRADIENT"


class NonFiniteLoss(CPLRNNError):
    code = "NON_FINITE_LOSS"


class NoConvergence(CPLRNNError):
    code = "NO_CONVERGENCE"


class InvalidItinerary(CPLRNNError):
    code = "INVALID_ITINERARY"


class EmbedRequiresRegular(CPLRNNError):
    code = "EMBED_REQUIRES_REGULAR"


class MinimumRefractory(CPLRNNError):
    code = "MINIMUM_REFRACTORY"
