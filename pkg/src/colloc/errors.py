"""Exception hierarchy shared by the solver modules and the CLI."""

from __future__ import annotations


class CollocError(Exception):
    """Base class for every error raised by the package."""

    exit_code = 1
    prefix = "error"


class ConfigError(CollocError, ValueError):
    """Invalid user input: bad parameters, unknown config keys, bad geometry."""

    exit_code = 2
    prefix = "config"


class CloudFormatError(ConfigError):
    """Malformed node file. ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NumericalError(CollocError, ArithmeticError):
    exit_code = 3
    prefix = "numerical"


class InsufficientSupportError(NumericalError):
    def __init__(self, node_id: int, count: int, needed: int):
        self.node_id = node_id
        self.count = count
        self.needed = needed
        super().__init__(
            f"node {node_id}: support has {count} members, at least {needed} required"
        )


class IllConditionedSupportError(NumericalError):
    def __init__(self, node_id: int, cond: float, limit: float):
        self.node_id = node_id
        self.cond = cond
        self.limit = limit
        super().__init__(
            f"node {node_id}: local system condition number {cond:.3e} exceeds {limit:.1e}"
        )


class DomainError(NumericalError):
    """Analytic field requested outside the domain where it is defined."""


class SingularPointError(DomainError):
    """Analytic field requested at its singular point."""


class AssemblyError(NumericalError):
    pass


class SingularSystemError(NumericalError):
    def __init__(self, message: str, suspect_rows=()):
        self.suspect_rows = list(suspect_rows)
        if self.suspect_rows:
            shown = ", ".join(str(r) for r in self.suspect_rows[:20])
            message = f"{message} (suspect rows: {shown})"
        super().__init__(message)


class ConvergenceError(NumericalError):
    """Krylov solver stopped before reaching the tolerance."""

    def __init__(self, message: str, residual: float, iterations: int, breakdown: bool = False):
        self.residual = residual
        self.iterations = iterations
        self.breakdown = breakdown
        kind = "breakdown" if breakdown else "no convergence"
        super().__init__(
            f"{kind}: {message} (residual {residual:.3e} after {iterations} iterations)"
        )


class SolverIOError(CollocError, OSError):
    exit_code = 4
    prefix = "io"
