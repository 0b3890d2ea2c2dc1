"""Exception hierarchy shared by all modules."""


class NarrowcapError(Exception):
    """Base class for every error raised by narrowcap."""


class NoSeparation(NarrowcapError):
    """Two point clouds admit no strictly separating hyperplane.

    ``witness`` is a point lying (approximately) in both convex hulls, or
    ``None`` when only a non-positive margin could be established.
    """

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class NoSector(NarrowcapError):
    """The randomized search found no sector certificate.

    This is a "not found" report, not a proof of non-existence.
    """


class ConeSearchFailed(NarrowcapError):
    pass


class SearchBudgetExceeded(NarrowcapError):
    """Torus scan exhausted its budget; carries the best point seen."""

    def __init__(self, message, best_w2, best_error):
        super().__init__(message)
        self.best_w2 = best_w2
        self.best_error = best_error


class UnboundedLipschitz(NarrowcapError):
    pass


class TrainingDiverged(NarrowcapError):
    pass


class NetworkFormatError(NarrowcapError, ValueError):
    """Malformed network document; ``location`` names the offending field."""

    def __init__(self, message, location=""):
        super().__init__(f"{location}: {message}" if location else message)
        self.location = location
