"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Bad input data or configuration (CLI exit code 2)."""


class SolverError(RuntimeError):
    """Numerical non-convergence with diagnostics (CLI exit code 3)."""
