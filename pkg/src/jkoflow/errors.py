"""Exception hierarchy shared by the solvers and the CLI."""


class JkoFlowError(Exception):
    """Base class for all errors raised by :mod:`jkoflow`."""


class NonPositiveDensity(JkoFlowError):
    """A logarithmic quantity was requested on a density with a zero or negative cell."""


class MassMismatch(JkoFlowError):
    """Two marginals do not carry the same total mass."""


class InfeasibleCost(JkoFlowError):
    """Every admissible transport plan has infinite cost."""


class NoConvergence(JkoFlowError):
    """An iterative solver ran out of iterations.

    The last residual is kept on ``residual`` so callers can decide how bad it was.
    """

    def __init__(self, message: str, residual: float = float("nan"), iterations: int = 0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class NumericalUnderflow(JkoFlowError):
    """All entries of a Gibbs kernel row underflowed."""


class InvalidEps(JkoFlowError, ValueError):
    pass


class StabilityViolation(JkoFlowError):
    """Explicit time step exceeds the diffusive stability bound."""


class ConfigError(JkoFlowError, ValueError):
    pass
