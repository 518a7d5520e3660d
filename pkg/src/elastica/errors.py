"""Exception hierarchy shared across the package.

Exit-code mapping used by the CLI: ConfigError -> 2, everything else -> 1.
"""


class ElasticaError(Exception):
    """Base class for all runtime failures raised by this package."""


class ConfigError(ElasticaError):
    """Invalid or inconsistent configuration (bad sizes, unknown keys, ...)."""


class DegenerateMapError(ElasticaError):
    """The flow map lost invertibility (det(grad eta) <= 0 somewhere)."""


class BoundaryDegeneracyError(ElasticaError):
    """|d1 eta| dropped below the admissible threshold on a wall."""


class AssemblyError(ElasticaError):
    """Non-finite data encountered while assembling a linear system."""


class PressureSolveError(ElasticaError):
    """Sparse solve failed or did not meet the residual tolerance."""


class IllPosedDataError(ElasticaError):
    """Initial data violates a compatibility condition beyond tolerance."""


class StepRejectedError(ElasticaError):
    """A time step was rejected (degeneracy detected mid-step)."""
