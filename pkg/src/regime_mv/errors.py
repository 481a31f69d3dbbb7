"""Exception types raised by the solvers."""


class RegimeMVError(Exception):
    """Base class for all package errors."""


class ModelError(RegimeMVError, ValueError):
    """Malformed model input or an out-of-range regime/time argument."""


class ModeError(RegimeMVError):
    """The requested constraint mode is not supported for this model."""


class InfeasibleError(RegimeMVError):
    """The mean-variance problem has no feasible or nontrivial solution."""


class SolverError(RegimeMVError):
    """An ODE integration or inner minimization failed."""
