"""Exception types shared across the package."""


class AbcLabError(Exception):
    """Base class for all package errors."""


class PoleError(AbcLabError):
    """Axial projection requested at or beyond the poles."""


class OriginError(AbcLabError):
    """Polar coordinates requested at the origin."""


class RangeError(AbcLabError):
    """Argument outside the domain of the requested operation."""


class IntegratorError(AbcLabError):
    """Implicit solve of a flow step failed to converge."""


class SingularJacobian(AbcLabError):
    """Jacobian too ill-conditioned to conjugate a structure through."""


class SearchExhausted(AbcLabError):
    """Parameter search hit its cap without meeting the certificate."""


class CertificateFailure(AbcLabError):
    """A stage certificate failed; carries the failing residual."""

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


class WitnessNotFound(AbcLabError):
    """No instability witness at the requested scale."""


class QuadratureError(AbcLabError):
    """Quadrature failed to reach the requested tolerance."""


class UnknownCheck(AbcLabError):
    """Diagnostic name not recognised."""


class MissingStage(AbcLabError):
    """Requested stage record does not exist."""
