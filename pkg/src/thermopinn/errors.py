"""Exception hierarchy.

Every error raised on purpose by the package derives from ``ThermoPinnError``
so callers (the CLI in particular) can map families of failures to exit codes.
"""


class ThermoPinnError(Exception):
    """Base class for all package errors."""


class ConfigurationError(ThermoPinnError, ValueError):
    """Inconsistent shapes, unknown identifiers, missing required inputs."""


class UsageError(ThermoPinnError, RuntimeError):
    """An API was called out of order (e.g. gradient before forward pass)."""


class NumericError(ThermoPinnError, ArithmeticError):
    """Non-finite values appeared during evaluation or training."""


class GeometryError(ConfigurationError):
    """Degenerate shapes, bad normals, malformed point clouds."""


class PrecisionError(GeometryError):
    """Coordinates no longer distinguishable in 64-bit floating point."""


class MaterialValidityError(ConfigurationError):
    """A graded property field evaluated to a non-positive value."""


class SingularMaterialError(ConfigurationError):
    """Elastic constants that make the Lame relations singular (nu = 0.5)."""


class BalancingError(ThermoPinnError, ValueError):
    """Invalid loss weights or degenerate balancing inputs."""
