"""Exception hierarchy.

Numerical failures derive from :class:`NumericalError`; the CLI maps them to
exit code 3. Bad inputs (invalid parameters, connectivity out of range,
malformed config) derive from :class:`ValueError` and map to exit code 2.
"""


class MarkovApproxError(Exception):
    """Base class for all errors raised by this package."""


class NumericalError(MarkovApproxError, ArithmeticError):
    """A computation failed for numerical reasons."""


class NotPositiveDefinite(NumericalError):
    """Cholesky factorization of a covariance matrix failed."""


class RankDeficient(NumericalError):
    """A design matrix or normal-equation matrix lost rank."""


class SingularSubmatrix(NumericalError):
    """A diagonal block used for a predictor solve is numerically singular."""


class NonPositiveInnovation(NumericalError):
    """An innovation variance fell to (or below) the positivity cutoff."""


class InvalidConnectivity(MarkovApproxError, ValueError):
    """Connectivity outside ``0 <= m <= n - 1``."""


class ConfigError(MarkovApproxError, ValueError):
    """Run configuration failed validation."""
