"""Exception types shared across the package."""


class SeqmcError(Exception):
    """Base class for all package errors."""


class ModelError(SeqmcError):
    """Invalid model definition (non-finite potential, bad weights, ...)."""


class ConfigError(SeqmcError):
    """Invalid experiment configuration."""


class ReversibilityError(SeqmcError):
    """Detailed balance violated beyond tolerance."""


class SizeError(SeqmcError):
    """Constructed object exceeds a configured size cap."""


class StiffnessError(SeqmcError):
    """ODE solve failed (step-size underflow or solver breakdown)."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class SimulationError(SeqmcError):
    """Event-driven simulation cannot proceed (e.g. rate bound violated)."""


class DisconnectedChainError(SeqmcError):
    """A single spectral constant was requested for a disconnected chain."""


class CertificationError(SeqmcError):
    """Tail/regularity conditions required by a certified bound fail."""

    def __init__(self, message, violations=None):
        super().__init__(message)
        self.violations = violations or []
