"""Exception and warning types raised across the package."""


class SblabError(Exception):
    """Base class for all package errors."""


class ParseError(SblabError):
    pass


class DegenerateDesign(SblabError):
    pass


class DimensionError(SblabError):
    pass


class DomainError(SblabError):
    pass


class CertificateRefused(SblabError):
    pass


class ComplexityRefused(SblabError):
    """A combinatorial budget would be exceeded.

    ``needed`` is the number of evaluations requested and ``budget`` the cap.
    """

    def __init__(self, message, needed=None, budget=None):
        super().__init__(message)
        self.needed = needed
        self.budget = budget


class SolverError(SblabError):
    """The convex solver failed to reach its tolerance; ``bound`` is the best
    objective value found (an upper bound on the infimum)."""

    def __init__(self, message, bound=None):
        super().__init__(message)
        self.bound = bound


class RankError(SblabError):
    pass


class ConvergenceError(SblabError):
    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class IntegralError(SblabError):
    pass


class EmptyMixture(SblabError):
    pass


class EmptyFamily(SblabError):
    pass


class ConfigError(SblabError):
    pass


class IoError(SblabError):
    """Output could not be written."""


class PrecisionWarning(UserWarning):
    pass


class MixingWarning(UserWarning):
    pass
