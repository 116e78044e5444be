"""Exception types raised across the package."""


class RsrError(Exception):
    """Base class for all package errors."""


class InvalidEdge(RsrError):
    """An edge references a vertex out of range or is a self-loop."""


class InvalidParameter(RsrError):
    """A numeric argument violates its precondition."""


class NumericalFailure(RsrError):
    """A linear-algebra or sampling step produced a degenerate result."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class DisconnectedGraph(RsrError):
    """Model fitting was requested on a graph with several components."""


class RankDeficientDesign(RsrError):
    """The design matrix does not have full column rank p < n."""


class InsufficientBasis(RsrError):
    """Fewer basis vectors are available than were requested."""


class ImplicitInterceptConflict(RsrError):
    """An ICAR model was given a design containing a constant column."""


class InvalidPenaltyRank(RsrError):
    """The penalty matrix rank does not keep the posterior proper."""


class IwlsDiverged(RsrError):
    """Iteratively reweighted least squares failed to converge."""


class MomentUndefined(RsrError):
    """A requested posterior moment does not exist for these inputs."""


class InvalidComparison(RsrError):
    """Two bases expected to share a column space do not."""


class DataFormatError(RsrError):
    """An input file could not be parsed."""
