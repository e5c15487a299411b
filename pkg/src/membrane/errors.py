"""Exception hierarchy shared by the library and the CLI."""


class MembraneError(Exception):
    """Base class for all library errors."""


class ConfigurationError(MembraneError, ValueError):
    """Invalid domain, solver or run configuration."""


class DomainError(MembraneError, ValueError):
    """An argument lies outside the admissible range of an operation."""


class ClassViolationError(MembraneError, ValueError):
    """Input does not satisfy the invariants of an admissible load class."""


class SolverError(MembraneError, RuntimeError):
    """Linear algebra failure (singular or non-finite system)."""


class NonConvergenceError(MembraneError, RuntimeError):
    """An iterative method exhausted its iteration budget."""


class PerturbationTooLargeError(MembraneError, ValueError):
    """A boundary perturbation would make region endpoints cross or merge."""
