"""Exception hierarchy shared by the solvers and the CLI."""


class ContractViolation(ValueError):
    """An argument breaks a documented precondition (bad shape, sign, ...)."""


class ConvergenceFailure(RuntimeError):
    """An iterative routine hit its iteration budget.

    ``info`` carries the last residuals so callers can log them.
    """

    def __init__(self, message, **info):
        super().__init__(message)
        self.info = info


class NumericalError(RuntimeError):
    """A scalar root search could not bracket or converge."""


class ConfigurationError(ValueError):
    """Inconsistent run configuration detected before iterating."""
