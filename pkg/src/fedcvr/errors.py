"""Exception types shared across the simulator."""


class SimulationError(Exception):
    """Base class for recoverable simulator failures."""


class ZeroDiagonal(SimulationError):
    """A covariance diagonal entry is (numerically) zero: degenerate client dimension."""


class SingularSubmatrix(SimulationError):
    """A client-subset covariance block failed its SPD factorization."""


class ZeroVector(SimulationError):
    """A zero-norm parameter vector reached a kernel that needs a direction."""

    def __init__(self, indices):
        self.indices = tuple(int(i) for i in indices)
        super().__init__(f"zero-norm parameter vector(s) at client index {self.indices}")


class DegenerateDegree(SimulationError):
    """An affinity row sums to ~0; the client has no neighbors to cluster with."""


class InsufficientPool(SimulationError):
    """Valuation masking left fewer candidates than the selection budget."""


class NonFiniteLoss(SimulationError):
    """Local training produced a non-finite loss or gradient (divergent step size)."""


class ConfigError(SimulationError):
    """Malformed experiment configuration."""

    def __init__(self, message, key=None, line=None):
        self.key = key
        self.line = line
        prefix = ""
        if key is not None:
            prefix += f"key '{key}'"
        if line is not None:
            prefix += f" (line {line})"
        super().__init__(f"{prefix}: {message}" if prefix else message)
