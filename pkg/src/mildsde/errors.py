"""Exception types shared across the library."""


class MildSdeError(Exception):
    """Base class for library errors."""


class DimensionMismatch(MildSdeError):
    """Operands do not have mutually consistent dimensions."""


class SpectrumCollision(MildSdeError):
    """A resolvent was requested at a point of the (represented) spectrum."""


class DomainViolation(MildSdeError):
    """An extended-operator evaluation left its numerically certified domain."""

    def __init__(self, message, node=None, path=None):
        super().__init__(message)
        self.node = node
        self.path = path


class TruncationInsufficient(MildSdeError):
    """A mode-series evaluation failed its tail bound at the current truncation.

    ``suggested_dim`` carries a usable truncation size when one exists;
    ``None`` means the series does not converge for any truncation.
    """

    def __init__(self, message, suggested_dim=None):
        super().__init__(message)
        self.suggested_dim = suggested_dim


class AdaptednessError(MildSdeError):
    """A signal builder violated the measurability contract."""


class GridMismatch(MildSdeError):
    """Two discretized objects do not live on the same time grid."""


class ConfigError(MildSdeError):
    """A scenario configuration failed schema validation."""


class NumericFailure(MildSdeError):
    """A computation produced non-finite values or a solver broke down."""
