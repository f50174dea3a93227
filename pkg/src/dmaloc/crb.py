"""Fisher information, Cramer-Rao and position error bounds.

For constant-modulus pilots and parameter-independent noise covariance the
combined output y(t) = v^H W h^H s(t) + v^H W n(t) is Gaussian with a mean
that carries all position information, and the 3x3 Fisher matrix over
(r, theta, phi) reduces to

    I_ij = (2 T P / (sigma^2 v^H W W^H v)) Re{ (v^H W g_i)(v^H W g_j)^* }

with g_i the conjugate-transposed i-th Jacobian row of the channel.  Note
the structural consequence: with a single combined output the matrix
Re{c c^H} has rank at most two, so the full 3-parameter bound does not
exist; use :func:`peb_subset` for the bound over the parameters actually
being estimated (e.g. (r, phi) with known elevation).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateDesignError, SingularInformationError
from .units import dbm_to_watts, thermal_noise_dbm

PARAM_NAMES = ("r", "theta", "phi")

# Eigenvalues below this fraction of the largest are treated as zero when
# inverting an information matrix.
_RCOND = 1e-12


@dataclass(frozen=True)
class PilotConfig:
    """Pilot block: T transmissions at constant power p_max (watts).

    Pilots are constant modulus, s(t) = sqrt(p_max), so the pilot Gram
    s s^H equals T p_max exactly.
    """

    t_pilots: int
    p_max: float

    def __post_init__(self):
        if not (isinstance(self.t_pilots, (int, np.integer))
                and not isinstance(self.t_pilots, bool) and self.t_pilots >= 1):
            raise ConfigError(f"t_pilots must be an integer >= 1, got {self.t_pilots!r}")
        if not (math.isfinite(self.p_max) and self.p_max > 0):
            raise ConfigError(f"p_max must be positive watts, got {self.p_max!r}")

    @classmethod
    def from_dbm(cls, t_pilots: int, p_max_dbm: float) -> "PilotConfig":
        return cls(t_pilots=t_pilots, p_max=dbm_to_watts(p_max_dbm))

    def pilot_vector(self) -> np.ndarray:
        return np.full(self.t_pilots, math.sqrt(self.p_max), dtype=complex)


@dataclass(frozen=True)
class NoiseModel:
    """Per-element AWGN variance sigma^2 in watts."""

    sigma2: float

    def __post_init__(self):
        if not (math.isfinite(self.sigma2) and self.sigma2 > 0):
            raise ConfigError(f"sigma2 must be positive, got {self.sigma2!r}")

    @classmethod
    def thermal(cls, bandwidth_hz: float) -> "NoiseModel":
        """Thermal floor -174 dBm/Hz over the signal bandwidth."""
        return cls(sigma2=dbm_to_watts(thermal_noise_dbm(bandwidth_hz)))


@dataclass(frozen=True)
class Fim:
    """3x3 Fisher information matrix over (r, theta, phi)."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.shape != (3, 3):
            raise ConfigError(f"FIM must be 3x3, got shape {m.shape}")
        scale = np.max(np.abs(m))
        if scale > 0 and np.max(np.abs(m - m.T)) > 1e-10 * scale:
            raise ConfigError("FIM must be symmetric")
        m = 0.5 * (m + m.T)
        trace = float(np.trace(m))
        if np.min(np.linalg.eigvalsh(m)) < -1e-10 * max(trace, 0.0):
            raise ConfigError("FIM must be positive semidefinite")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.matrix)


def fim(jac: np.ndarray, analog, v: np.ndarray, pilots: PilotConfig,
        noise: NoiseModel) -> Fim:
    """Fisher information of (r, theta, phi) for a given hybrid combiner.

    ``analog`` may be an :class:`~dmaloc.circuit.AnalogBeamformer` or the raw
    (n_rf, N) matrix; ``jac`` is the (3, N) channel Jacobian at the user
    position.  The result is invariant to rescaling v by any nonzero complex
    scalar and linear in t_pilots and p_max.
    """
    w = np.asarray(getattr(analog, "matrix", analog), dtype=complex)
    v = np.asarray(v, dtype=complex)
    effective = w.conj().T @ v            # element-domain combiner W^H v
    denom = float(np.real(np.vdot(effective, effective)))
    if denom == 0.0:
        raise DegenerateDesignError(
            "degenerate combiner: v^H W W^H v = 0 (zero v or v in the null "
            "space of the analog stage)"
        )
    c = np.conj(np.asarray(jac, dtype=complex) @ effective)  # c_i = v^H W g_i
    scale = 2.0 * pilots.t_pilots * pilots.p_max / (noise.sigma2 * denom)
    return Fim(scale * np.real(np.outer(c, c.conj())))


def _inverse_trace(matrix: np.ndarray, label: str) -> float:
    eigvals = np.linalg.eigvalsh(matrix)
    largest = float(eigvals[-1])
    smallest = float(eigvals[0])
    if largest <= 0 or smallest <= _RCOND * largest:
        raise SingularInformationError(
            f"{label} is numerically singular: eigenvalues "
            f"[{', '.join(f'{x:.6e}' for x in eigvals)}], "
            f"rcond threshold {_RCOND:g}"
        )
    return float(np.sum(1.0 / eigvals))


def crb(information: Fim) -> float:
    """Trace of the inverse information matrix, mixed units (m^2, rad^2)."""
    return _inverse_trace(information.matrix, "information matrix")


def peb(information: Fim) -> float:
    """Position error bound sqrt(Tr I^{-1}) over all three parameters."""
    return math.sqrt(crb(information))


def peb_subset(information: Fim, params: tuple[int, ...]) -> float:
    """Bound over a subset of (r, theta, phi) with the others known.

    ``params`` holds indices into (r=0, theta=1, phi=2); the bound is the
    root trace of the inverse of the corresponding sub-matrix.
    """
    idx = tuple(params)
    if not idx or any(i not in (0, 1, 2) for i in idx) or len(set(idx)) != len(idx):
        raise ValueError(f"params must be distinct indices into (r, theta, phi), got {params!r}")
    sub = information.matrix[np.ix_(idx, idx)]
    names = ",".join(PARAM_NAMES[i] for i in idx)
    return math.sqrt(_inverse_trace(sub, f"({names}) information sub-matrix"))


def fim_trace_objective(information: Fim) -> float:
    """Trace of the information matrix, the bound surrogate the beamforming
    design maximises."""
    return float(np.trace(information.matrix))


def design_matrix(jac: np.ndarray) -> np.ndarray:
    """Design matrix A = sum_i g_i g_i^H, Hermitian PSD of rank <= 3."""
    j = np.asarray(jac, dtype=complex)
    return j.conj().T @ j
