"""Exception types raised across countfact."""


class CountfactError(Exception):
    """Base class for all countfact errors."""


class DomainError(CountfactError, ValueError):
    """Argument outside the domain of a distribution or formula."""


class NonTermination(CountfactError, RuntimeError):
    """Sampler exceeded its generation cap."""


class SvdFailure(CountfactError, RuntimeError):
    pass


class DegenerateColumn(CountfactError, ValueError):
    """A factor column has (numerically) zero norm."""


class ShapeMismatch(CountfactError, ValueError):
    pass


class NonFiniteLikelihood(CountfactError, FloatingPointError):
    """Negative log-likelihood evaluated to NaN or infinity."""


class NumericalUnderflow(CountfactError, FloatingPointError):
    """A multiplicative-update denominator fell below 1e-300."""


class ReportIncomplete(CountfactError, RuntimeError):
    """Too many fits failed for an aggregate report to be meaningful."""
