"""Exception hierarchy shared by all rankflux modules."""


class RankfluxError(Exception):
    """Base class for every error raised by rankflux."""


class EllipticityError(RankfluxError, ValueError):
    """The diffusion coefficient is not strictly positive on [0, 1]."""


class DomainError(RankfluxError, ValueError):
    """An argument lies outside the domain where the operation is defined."""


class ParticleOverflowError(RankfluxError, FloatingPointError):
    """A particle position became non-finite during a time step."""

    def __init__(self, index, message=None):
        self.index = index
        super().__init__(message or f"non-finite position for particle {index}")


class ConfigurationError(RankfluxError, ValueError):
    """Invalid experiment or solver configuration."""


class CFLViolation(ConfigurationError):
    """The requested time step violates the explicit stability bound."""

    def __init__(self, dt, dt_max):
        self.dt = dt
        self.dt_max = dt_max
        super().__init__(
            f"time step {dt:.6g} exceeds the stability bound {dt_max:.6g}; "
            f"use dt <= {dt_max:.6g}"
        )


class SchemeFailureError(RankfluxError, ArithmeticError):
    """A numerical scheme lost a structural property (e.g. monotonicity)."""

    def __init__(self, step, message):
        self.step = step
        super().__init__(f"step {step}: {message}")


class DomainTooSmallError(RankfluxError, ValueError):
    """Mass leaked through the boundary of a truncated spatial domain."""


class MomentError(RankfluxError, ValueError):
    """A required moment (or tail integral) is not finite."""


class PreconditionError(RankfluxError, ValueError):
    """A documented precondition of an operation is not met."""


class CacheError(RankfluxError, KeyError):
    """A required cache entry is missing or corrupt."""
