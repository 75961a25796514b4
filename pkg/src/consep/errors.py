"""Exception types shared across the solver pipeline."""


class ConsepError(Exception):
    """Base class for all solver errors."""


class ConfigError(ConsepError):
    """Invalid configuration, grid, or measure specification."""


class InfeasibleInstance(ConsepError):
    """No calibrated insider model exists; carries the arbitrage witness."""

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class MassConservationError(ConsepError):
    """Unflagged probability mass leaked beyond tolerance during evolution."""


class HorizonError(ConsepError):
    """Time window too short: stopping mass not absorbed within t_max."""


class SolverError(ConsepError):
    """Iterative solver failed to converge; carries iteration diagnostics."""
