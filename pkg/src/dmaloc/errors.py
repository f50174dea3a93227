"""Exception types shared across the package."""


class DmaLocError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(DmaLocError, ValueError):
    """A configuration value violates a documented constraint."""


class SingularityError(DmaLocError, ArithmeticError):
    """A kernel or linear system is singular (coincident points, guide
    resonance, zero termination weight, non-invertible circuit matrix)."""


class SingularInformationError(SingularityError):
    """The Fisher information matrix is singular or numerically rank
    deficient; the requested error bound does not exist."""


class DegenerateDesignError(DmaLocError, ValueError):
    """A beamforming design step received degenerate input (zero design
    matrix, zero combiner, rank-deficient analog stage)."""
