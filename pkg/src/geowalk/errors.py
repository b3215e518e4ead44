"""Exception hierarchy shared by every geowalk module."""


class GeowalkError(Exception):
    pass


class PresentationError(GeowalkError, ValueError):
    pass


class UnknownBackend(PresentationError):
    pass


class MalformedGraph(PresentationError):
    pass


class AlphabetMismatch(GeowalkError, ValueError):
    pass


class RadiusExceeded(GeowalkError):
    """A query needs a group element outside the cached Cayley ball."""


class BudgetExceeded(GeowalkError):
    pass


class NotGeodesicAxis(GeowalkError, ValueError):
    pass


class WindowTooSmall(GeowalkError):
    """A projection landed inside the outer margin of a truncated axis window."""


class PreconditionError(GeowalkError, ValueError):
    pass


class EndpointInsideNeighborhood(PreconditionError):
    pass


class ProjectionGapTooSmall(PreconditionError):
    pass


class InsufficientData(GeowalkError):
    pass


class HypothesisViolated(PreconditionError):
    def __init__(self, which, index=None, detail=""):
        self.which = which
        self.index = index
        msg = f"hypothesis ({which}) violated"
        if index is not None:
            msg += f" at item {index}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class SearchExhausted(GeowalkError):
    pass


class EnumerationBudgetExceeded(GeowalkError):
    pass


class InvalidTail(GeowalkError, ValueError):
    pass


class InsufficientTrials(GeowalkError, ValueError):
    pass


class ZeroVariance(GeowalkError, ValueError):
    pass


class MissingCheckpoints(GeowalkError):
    pass


class ConfigError(GeowalkError):
    pass


class ChecksumMismatch(GeowalkError):
    pass


class VersionMismatch(GeowalkError):
    pass


class InvalidMeasure(GeowalkError, ValueError):
    """Step distribution with non-positive weights, a total other than 1, or a support that fails to generate."""
