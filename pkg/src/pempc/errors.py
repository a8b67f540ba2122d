"""Exception hierarchy shared across the package."""


class PempcError(Exception):
    """Base class for all package errors."""


class ConfigurationError(PempcError):
    """Malformed model/experiment configuration (dimension mismatch, bad schema, ...)."""


class NoEquilibriumFound(PempcError):
    """Newton iteration for a steady state did not converge."""

    def __init__(self, message, x_last=None, residual=None):
        super().__init__(message)
        self.x_last = x_last
        self.residual = residual


class EigenvalueOneAtEquilibrium(PempcError):
    """The state Jacobian at the steady state has an eigenvalue at 1.

    The periodicity map is singular there, so period-M references around
    this point cannot be constructed by shooting.
    """

    def __init__(self, message, equilibrium=None, eigenvalues=None):
        super().__init__(message)
        self.equilibrium = equilibrium
        self.eigenvalues = eigenvalues


class PeriodicityJacobianSingular(PempcError):
    """I - d(rollout)/dx0 is numerically singular in the shooting Newton step."""


class ShootingDiverged(PempcError):
    """Periodic shooting Newton iteration diverged."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history if history is not None else []


class WindowTooShort(PempcError):
    """Excitation window length M - d is not positive."""


class CertificationFailed(PempcError):
    """Reference generation failed; `stage` names the pipeline stage.

    Carries whatever diagnostic object the failing stage produced
    (excitation certificate, reachability report, ...).
    """

    def __init__(self, message, stage, certificate=None, report=None):
        super().__init__(message)
        self.stage = stage
        self.certificate = certificate
        self.report = report


class PenaltyStalled(PempcError):
    """Penalty solver could not reduce constraint violations below tolerance."""

    def __init__(self, message, violation=None, trajectory=None):
        super().__init__(message)
        self.violation = violation
        self.trajectory = trajectory


class RolloutDiverged(PempcError):
    """A prediction rollout produced non-finite values."""


class ConvergenceFailure(PempcError):
    """MPC solver hit the iteration cap before the gradient tolerance."""

    def __init__(self, message, best_solution=None):
        super().__init__(message)
        self.best_solution = best_solution


class IllConditionedUpdate(PempcError):
    """The innovation weighting matrix D in an RLS update is numerically singular."""


class SimulationAborted(PempcError):
    """Closed-loop run aborted; carries the partial trace up to the failure."""

    def __init__(self, message, trace=None, step=None):
        super().__init__(message)
        self.trace = trace
        self.step = step
