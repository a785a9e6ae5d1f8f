"""Exception hierarchy shared by all qdrive modules."""


class QDriveError(Exception):
    """Base class for all errors raised by qdrive."""


class DimensionError(QDriveError, ValueError):
    """A parameter point or index does not match the model."""


class DegeneracyError(QDriveError):
    """The spectrum is (numerically) degenerate at the requested point."""


class TrackingError(QDriveError):
    """Eigenvector continuation between two snapshots is ambiguous."""


class SingularMetricError(QDriveError):
    """The ground-state metric cannot be inverted."""


class QuadratureError(QDriveError):
    """An adaptive quadrature did not reach its tolerance."""


class GeodesicError(QDriveError):
    """The geodesic boundary-value solver failed."""


class IntegrationError(QDriveError):
    """The time integrator failed (step-size underflow or step limit)."""


class ProtocolConditionError(QDriveError):
    """A protocol does not satisfy the endpoint conditions an operation needs."""


class FitError(QDriveError):
    """Not enough data to fit an envelope or a regime."""


class ConfigError(QDriveError, ValueError):
    """An experiment configuration failed validation."""
