"""Exception types raised by the solvers."""

from __future__ import annotations


class DimensionError(ValueError):
    """Operands live on different grids or have incompatible shapes."""


class MassError(ValueError):
    """A measure left the probability simplex (mass drift or negativity)."""


class OracleSizeError(ValueError):
    """The linear-programming oracle was asked for a problem it cannot hold."""


class BoxTooSmallError(ValueError):
    """Brute-force Legendre maximizer landed on the edge of the momentum box."""


class VelocityBoxExhausted(RuntimeError):
    """The semi-Lagrangian argmin hit the edge of the velocity box.

    Signals that the a-priori Lipschitz bound used to size the box was too small.
    """

    def __init__(self, message: str, time_index: int | None = None, v_max: float | None = None):
        super().__init__(message)
        self.time_index = time_index
        self.v_max = v_max


class CFLViolation(ValueError):
    """Explicit transport step would break the CFL condition."""

    def __init__(self, message: str, admissible_dt: float):
        super().__init__(message)
        self.admissible_dt = admissible_dt


class NonConvergenceError(RuntimeError):
    """A fixed-point or value iteration ran out of iterations.

    The residual history is kept so the caller can diagnose the failure.
    """

    def __init__(self, message: str, history=None, partial=None):
        super().__init__(message)
        self.history = list(history) if history is not None else []
        self.partial = partial


class ConfigError(ValueError):
    """Invalid run configuration; ``key`` names the offending entry."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message if key is None else f"{key}: {message}")
        self.key = key
