"""Exception hierarchy shared by every module."""


class KickRatchetError(Exception):
    pass


class DomainError(KickRatchetError, ValueError):
    """A parameter lies outside the domain where the quantity is defined."""


class TrajectoryOverflowError(KickRatchetError, OverflowError):
    """A trajectory exceeded the momentum guard bound."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class LeakError(KickRatchetError):
    """Too many Ulam trajectories left the momentum window."""

    def __init__(self, message, leak_fraction=None):
        super().__init__(message)
        self.leak_fraction = leak_fraction


class ConvergenceError(KickRatchetError):
    def __init__(self, message, converged=0):
        super().__init__(message)
        self.converged = converged


class DegeneracyError(KickRatchetError):
    def __init__(self, message, eigenvalues=()):
        super().__init__(message)
        self.eigenvalues = list(eigenvalues)


class SizeError(KickRatchetError, ValueError):
    pass


class IntegrationError(KickRatchetError):
    pass


class EmptyError(KickRatchetError, ValueError):
    pass


class GeometryError(KickRatchetError, ValueError):
    pass


class MissingArtifactError(KickRatchetError):
    def __init__(self, message, missing=()):
        super().__init__(message)
        self.missing = list(missing)


class ConfigError(KickRatchetError, ValueError):
    pass


class StageError(KickRatchetError):
    """A per-point pipeline stage failed; ``stage`` names it, ``__cause__`` holds the error."""

    def __init__(self, message, stage=None, error_class=None):
        super().__init__(message)
        self.stage = stage
        self.error_class = error_class


class StoreLockedError(KickRatchetError):
    """Another live process owns the result store."""
