"""Exception hierarchy shared across the package."""


class NestedSPDEError(Exception):
    """Base class for all package errors."""


class MeshError(NestedSPDEError, ValueError):
    pass


class AssemblyError(NestedSPDEError):
    pass


class SolverError(NestedSPDEError):
    """A linear solve could not deliver the requested residual."""


class FactorizationError(SolverError):
    """Non-positive pivot during Cholesky, or exact singularity in LU."""


class ConvergenceError(SolverError):
    pass


class UnsupportedError(NestedSPDEError):
    pass


class ConfigError(NestedSPDEError, ValueError):
    pass
