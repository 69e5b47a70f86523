"""Exception hierarchy shared across the toolkit.

Each error class maps onto one CLI exit code (see cli module):
config 2, validation 3, divergence 4, oracle failure 5.
"""


class GneseekError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(GneseekError):
    """Malformed or inconsistent scenario configuration.

    Carries an optional ``location`` (section / key) so CLI messages can
    point at the offending part of the config file.
    """

    def __init__(self, message: str, location: str | None = None):
        self.location = location
        if location:
            message = f"{location}: {message}"
        super().__init__(message)


class ValidationFailure(GneseekError):
    """A runtime precondition failed (initial state, step guard, ...)."""

    def __init__(self, message: str, violations: list[str] | None = None):
        self.violations = violations or []
        super().__init__(message)


class IntegrationDiverged(GneseekError):
    """State became non-finite during integration.

    ``time`` is the integration time of the first NaN/Inf; ``trajectory``
    holds whatever was recorded up to that point.
    """

    def __init__(self, time: float, trajectory=None):
        self.time = time
        self.trajectory = trajectory
        super().__init__(f"state became non-finite at t={time:.6g}")


class OracleError(GneseekError):
    """The ground-truth equilibrium solver did not converge.

    Usually signals a violated monotonicity assumption or a bad step size.
    """
