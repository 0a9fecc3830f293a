"""Exception hierarchy shared by every module of the package."""


class OrderIdError(Exception):
    """Base class for all package errors."""


class SupportMismatch(OrderIdError):
    """The second density vanishes where the first one carries mass."""


class MomentDiverges(OrderIdError):
    """An exponentially tilted moment does not settle under truncation refinement."""


class InvalidTheta(OrderIdError, ValueError):
    """A parameter vector violates the invariants of its family."""


class DimensionTooHigh(OrderIdError):
    """Tensor-grid computations are restricted to small parameter dimensions."""


class DegenerateProposal(OrderIdError):
    """The Laplace proposal could not be made positive definite."""


class DomainViolation(OrderIdError, ValueError):
    """An inequality was evaluated outside the range where it is stated."""


class EtaSearchFailed(OrderIdError):
    """No envelope radius produced a valid bracket."""


class DegenerateWeight(OrderIdError, ValueError):
    """The extra mixture component has zero weight."""


class ZeroCoefficient(OrderIdError, ValueError):
    """A true regression coefficient needed as a divisor is zero."""


class InsufficientData(OrderIdError):
    """Too few usable grid points to fit an error-rate curve."""


class ConfigError(OrderIdError):
    """Base class for configuration problems."""


class ParseError(ConfigError):
    """The configuration text is not in the documented format."""


class ValidationError(ConfigError):
    """A configuration value is outside its allowed range."""
