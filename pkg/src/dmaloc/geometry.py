"""Panel geometry and electromagnetic constants of the metasurface receiver.

The receive panel lies in the xz-plane with the first radiating element at the
origin.  Microstrips (waveguides, one per RF chain) are stacked along x with
pitch ``d_rf``; each microstrip hosts ``n_e`` metamaterial elements along z
with pitch ``d_e``.  The waveguide axis therefore runs along z: the in-guide
longitudinal coordinate of an element equals its panel z coordinate, and the
transverse coordinate is fixed at the centre of the guide cross-section
(``wg_a / 2``).

All lengths are in meters, angles in radians, frequencies in Hz.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

SPEED_OF_LIGHT = 299_792_458.0          # m/s
VACUUM_PERMITTIVITY = 8.8541878128e-12  # F/m


@dataclass(frozen=True)
class Position3D:
    """Cartesian point in meters."""

    x: float
    y: float
    z: float

    def __post_init__(self):
        for name in ("x", "y", "z"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigError(f"Position3D.{name} must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)


@dataclass(frozen=True)
class PanelConfig:
    """Full physical description of the receive panel.

    The waveguide parameters default to values that keep the fundamental mode
    propagating at the carrier: width 0.73 λ, height 0.17 λ, length spanning
    the element row plus half a wavelength.  These are engineering defaults,
    not measured hardware constants; override them when a datasheet is
    available.

    Parameters
    ----------
    n_rf:
        Number of microstrips (equivalently RF chains).
    n_e:
        Metamaterial elements per microstrip.
    freq:
        Carrier frequency in Hz.
    d_rf, d_e:
        Microstrip pitch and in-strip element pitch (default λ and λ/5).
    wg_a, wg_b, wg_len:
        Waveguide width, height and length.
    eps_r, mu_r:
        Relative permittivity / permeability of the guide filling.
    port_offset:
        Distance of the RF-chain feed port before the first element along the
        guide axis (default λ/4).  The port of strip i sits at
        ((i-1) d_rf, 0, -port_offset).
    self_coupling_sep:
        Separation used to regularise the self term of the coupling matrix
        (default d_e / 100).
    """

    n_rf: int
    n_e: int
    freq: float = 28e9
    d_rf: float | None = None
    d_e: float | None = None
    wg_a: float | None = None
    wg_b: float | None = None
    wg_len: float | None = None
    eps_r: float = 1.0
    mu_r: float = 1.0
    port_offset: float | None = None
    self_coupling_sep: float | None = None

    def __post_init__(self):
        for name in ("n_rf", "n_e"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or isinstance(value, bool):
                raise ConfigError(f"{name} must be an integer, got {value!r}")
            if value < 1:
                raise ConfigError(f"{name} must be >= 1, got {value}")
        if not (math.isfinite(self.freq) and self.freq > 0):
            raise ConfigError(f"freq must be positive, got {self.freq!r}")

        lam = SPEED_OF_LIGHT / self.freq
        defaults = {
            "d_rf": lam,
            "d_e": lam / 5.0,
            "wg_a": 0.73 * lam,
            "wg_b": 0.17 * lam,
            "port_offset": lam / 4.0,
        }
        for name, value in defaults.items():
            if getattr(self, name) is None:
                object.__setattr__(self, name, value)
        if self.wg_len is None:
            object.__setattr__(self, "wg_len", (self.n_e - 1) * self.d_e + lam / 2.0)
        if self.self_coupling_sep is None:
            object.__setattr__(self, "self_coupling_sep", self.d_e / 100.0)

        for name in ("d_rf", "d_e", "wg_a", "wg_b", "wg_len", "self_coupling_sep"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ConfigError(f"{name} must be a positive length, got {value!r}")
        if not (math.isfinite(self.port_offset) and self.port_offset >= 0):
            raise ConfigError(
                f"port_offset must be non-negative, got {self.port_offset!r}"
            )
        for name in ("eps_r", "mu_r"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ConfigError(f"{name} must be positive, got {value!r}")

        # Fundamental-mode cutoff: the guide must be wider than half the
        # in-guide wavelength, otherwise k_x is evanescent.
        guide_wavelength = lam * math.sqrt(self.eps_r * self.mu_r)
        if self.wg_a <= guide_wavelength / 2.0:
            raise ConfigError(
                f"wg_a={self.wg_a:.6g} m does not support a propagating "
                f"fundamental mode (needs > {guide_wavelength / 2.0:.6g} m)"
            )

    @property
    def n_elements(self) -> int:
        """Total element count across all microstrips."""
        return self.n_rf * self.n_e

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.freq


@dataclass(frozen=True)
class DerivedConstants:
    """Scalar electromagnetic constants derived from a :class:`PanelConfig`.

    ``k_x`` follows the sign convention Re{sqrt(k^2 - (pi/a)^2)} minus j times
    Im{sqrt(.)}, i.e. the conjugate of the principal square root, so its
    imaginary part is never positive.
    """

    lambda0: float   # free-space wavelength, m
    k0: float        # free-space wavenumber, rad/m
    k_wg: float      # waveguide wavenumber, rad/m
    k_x: complex     # transverse wavenumber, rad/m
    omega: float     # angular frequency, rad/s
    eps: float       # medium permittivity, F/m


def transverse_wavenumber(k: float, a: float) -> complex:
    """Transverse wavenumber of the fundamental mode of a guide of width a.

    Returns the conjugate of the principal square root of k^2 - (pi/a)^2, so
    a propagating mode gives a positive real value and an evanescent mode a
    purely imaginary value with negative imaginary part.
    """
    root = np.sqrt(complex(k * k - (math.pi / a) ** 2))
    return complex(root.real, -abs(root.imag))


def derive_constants(cfg: PanelConfig) -> DerivedConstants:
    """Compute all scalar constants used by the circuit and channel models."""
    lam = SPEED_OF_LIGHT / cfg.freq
    k0 = 2.0 * math.pi / lam
    k_wg = 2.0 * math.pi / (lam * math.sqrt(cfg.eps_r * cfg.mu_r))
    return DerivedConstants(
        lambda0=lam,
        k0=k0,
        k_wg=k_wg,
        k_x=transverse_wavenumber(k_wg, cfg.wg_a),
        omega=2.0 * math.pi * cfg.freq,
        eps=cfg.eps_r * VACUUM_PERMITTIVITY,
    )


def element_position(cfg: PanelConfig, i: int, n: int) -> Position3D:
    """Position of element n (1..n_e) of microstrip i (1..n_rf).

    The panel lies in the xz-plane: strip i is offset by (i-1) d_rf along x
    and element n by (n-1) d_e along z.
    """
    if not 1 <= i <= cfg.n_rf:
        raise IndexError(f"microstrip index {i} out of range 1..{cfg.n_rf}")
    if not 1 <= n <= cfg.n_e:
        raise IndexError(f"element index {n} out of range 1..{cfg.n_e}")
    return Position3D((i - 1) * cfg.d_rf, 0.0, (n - 1) * cfg.d_e)


def rf_port_position(cfg: PanelConfig, i: int) -> Position3D:
    """Feed-port location of microstrip i: one port offset before the first
    element along the guide axis."""
    if not 1 <= i <= cfg.n_rf:
        raise IndexError(f"microstrip index {i} out of range 1..{cfg.n_rf}")
    return Position3D((i - 1) * cfg.d_rf, 0.0, -cfg.port_offset)


def element_grid(cfg: PanelConfig) -> np.ndarray:
    """All element positions as an (N, 3) array in canonical order.

    The canonical flat index of element n of strip i is (i-1) n_e + (n-1);
    every vector and matrix in the package uses this ordering.
    """
    xs = np.arange(cfg.n_rf) * cfg.d_rf
    zs = np.arange(cfg.n_e) * cfg.d_e
    out = np.zeros((cfg.n_elements, 3))
    out[:, 0] = np.repeat(xs, cfg.n_e)
    out[:, 2] = np.tile(zs, cfg.n_rf)
    return out


def strip_index(cfg: PanelConfig, flat: np.ndarray | int) -> np.ndarray | int:
    """Microstrip (0-based) owning each canonical flat element index."""
    return np.asarray(flat) // cfg.n_e
