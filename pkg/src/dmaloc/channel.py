"""Near-field uplink channel between a single-antenna user and the panel.

The user sits at polar coordinates (r, theta, phi) — range from the origin,
elevation from the +z axis, azimuth from +x in the xy-plane — so its
Cartesian position is r (sin theta cos phi, sin theta sin phi, cos theta).
Each channel entry carries the spherical-wave amplitude lambda / (4 pi r_mn)
and phase 2 pi r_mn / lambda of the exact element distance r_mn, which is
what makes range observable in the near field.

Entries follow the canonical flat ordering (i-1) n_e + (n-1) of
:func:`dmaloc.geometry.element_grid`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .geometry import SPEED_OF_LIGHT, PanelConfig, element_grid

_FD_ANGLE_SCALE = 1.0  # radians; finite-difference scale for the angle rows


@dataclass(frozen=True)
class UePosition:
    """User position in polar coordinates (meters, radians)."""

    r: float
    theta: float
    phi: float

    def __post_init__(self):
        if not (math.isfinite(self.r) and self.r > 0):
            raise ConfigError(f"r must be positive, got {self.r!r}")
        if not 0.0 < self.theta < math.pi:
            raise ConfigError(f"theta must lie in (0, pi), got {self.theta!r}")
        if not 0.0 <= self.phi <= math.pi:
            raise ConfigError(f"phi must lie in [0, pi], got {self.phi!r}")

    def as_array(self) -> np.ndarray:
        return np.array([self.r, self.theta, self.phi], dtype=float)


@dataclass(frozen=True)
class RadiationProfile:
    """Per-element radiation profile F(theta).

    ``isotropic`` is the default (F = 1).  ``cosine-power`` gives
    F(theta) = 2 (q + 1) cos^q(theta) for sensitivity studies; it is
    normalised so the hemisphere integral matches the isotropic case.
    """

    kind: str = "isotropic"
    exponent: float = 0.0

    def __post_init__(self):
        if self.kind not in ("isotropic", "cosine-power"):
            raise ConfigError(f"unknown radiation profile kind {self.kind!r}")
        if self.kind == "cosine-power" and self.exponent < 0:
            raise ConfigError("cosine-power exponent must be >= 0")

    def gain(self, theta):
        theta = np.asarray(theta, dtype=float)
        if self.kind == "isotropic":
            return np.ones_like(theta)
        q = self.exponent
        return 2.0 * (q + 1.0) * np.cos(theta) ** q

    def amplitude_log_derivative(self, theta):
        """d/dtheta of ln sqrt(F); zero for the isotropic profile."""
        theta = np.asarray(theta, dtype=float)
        if self.kind == "isotropic":
            return np.zeros_like(theta)
        return -0.5 * self.exponent * np.tan(theta)


ISOTROPIC = RadiationProfile()


def ue_to_cartesian(ue: UePosition) -> np.ndarray:
    """Cartesian position of the user, meters."""
    return polar_to_cartesian(ue.r, ue.theta, ue.phi)


def polar_to_cartesian(r, theta, phi) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    st = np.sin(theta)
    return np.stack(
        (r * st * np.cos(phi), r * st * np.sin(phi), r * np.cos(theta)),
        axis=-1,
    )


def element_distances(r, theta, phi, cfg: PanelConfig) -> np.ndarray:
    """Distances from the user to every element, shape (..., N).

    Accepts broadcastable arrays for (r, theta, phi); no domain validation is
    performed so grid evaluations may touch boundary angles.
    """
    user = polar_to_cartesian(r, theta, phi)          # (..., 3)
    diff = user[..., None, :] - element_grid(cfg)     # (..., N, 3)
    return np.sqrt(np.sum(diff * diff, axis=-1))


def element_distance(ue: UePosition, cfg: PanelConfig, i: int, n: int) -> float:
    """Distance from the user to element n (1..n_e) of strip i (1..n_rf)."""
    if not 1 <= i <= cfg.n_rf:
        raise IndexError(f"microstrip index {i} out of range 1..{cfg.n_rf}")
    if not 1 <= n <= cfg.n_e:
        raise IndexError(f"element index {n} out of range 1..{cfg.n_e}")
    st = math.sin(ue.theta)
    dx = ue.r * st * math.cos(ue.phi) - (i - 1) * cfg.d_rf
    dy = ue.r * st * math.sin(ue.phi)
    dz = ue.r * math.cos(ue.theta) - (n - 1) * cfg.d_e
    return math.sqrt(dx * dx + dy * dy + dz * dz)


def element_elevation(ue: UePosition, cfg: PanelConfig, i: int, n: int) -> float:
    """Elevation of the user as seen from element n of strip i.

    arcsin(|(n-1) d_e - r cos theta| / r_mn); the argument is clamped to
    [0, 1] to absorb rounding exactly at broadside geometry.
    """
    r_mn = element_distance(ue, cfg, i, n)
    axial = abs((n - 1) * cfg.d_e - ue.r * math.cos(ue.theta))
    return math.asin(min(axial / r_mn, 1.0))


def _elevations(r, theta, phi, cfg: PanelConfig, dist: np.ndarray) -> np.ndarray:
    """Per-element elevations, broadcast like element_distances."""
    r = np.asarray(r, dtype=float)
    theta = np.asarray(theta, dtype=float)
    axial_offsets = np.tile(np.arange(cfg.n_e) * cfg.d_e, cfg.n_rf)
    axial = np.abs(
        axial_offsets - (r * np.cos(theta))[..., None]
    )
    return np.arcsin(np.clip(axial / dist, 0.0, 1.0))


def channel_batch(r, theta, phi, cfg: PanelConfig,
                  profile: RadiationProfile = ISOTROPIC) -> np.ndarray:
    """Channel vectors for broadcastable polar coordinates, shape (..., N)."""
    lam = SPEED_OF_LIGHT / cfg.freq
    dist = element_distances(r, theta, phi, cfg)
    amp = lam / (4.0 * math.pi * dist)
    if profile.kind != "isotropic":
        amp = amp * np.sqrt(profile.gain(_elevations(r, theta, phi, cfg, dist)))
    return amp * np.exp(2j * math.pi / lam * dist)


def channel(ue: UePosition, cfg: PanelConfig,
            profile: RadiationProfile = ISOTROPIC) -> np.ndarray:
    """Near-field channel vector at a user position, shape (N,)."""
    return channel_batch(ue.r, ue.theta, ue.phi, cfg, profile)


def channel_jacobian(ue: UePosition, cfg: PanelConfig,
                     profile: RadiationProfile = ISOTROPIC) -> np.ndarray:
    """Analytic partials of the channel, shape (3, N), rows (r, theta, phi).

    Each entry combines the range derivative through amplitude (-1/r_mn) and
    phase (+j 2 pi / lambda), plus, for non-isotropic profiles, the elevation
    derivative through sqrt(F).  At broadside elements the non-differentiable
    |.| inside the elevation uses sign(0) = +1.
    """
    lam = SPEED_OF_LIGHT / cfg.freq
    h = channel(ue, cfg, profile)
    pos = element_grid(cfg)
    user = ue_to_cartesian(ue)
    diff = user[None, :] - pos                       # (N, 3)
    dist = np.sqrt(np.sum(diff * diff, axis=-1))     # (N,)

    st, ct = math.sin(ue.theta), math.cos(ue.theta)
    sp, cp = math.sin(ue.phi), math.cos(ue.phi)
    r = ue.r
    dudz = np.array([
        [st * cp, st * sp, ct],
        [r * ct * cp, r * ct * sp, -r * st],
        [-r * st * sp, r * st * cp, 0.0],
    ])                                               # (3, 3): du/d(r,theta,phi)
    ddist = (dudz @ diff.T) / dist[None, :]          # (3, N)

    jac = (h * (2j * math.pi / lam - 1.0 / dist))[None, :] * ddist

    if profile.kind != "isotropic":
        axial_offsets = np.tile(np.arange(cfg.n_e) * cfg.d_e, cfg.n_rf)
        signed = axial_offsets - r * ct
        sign = np.where(signed >= 0.0, 1.0, -1.0)
        axial = np.abs(signed)
        elev = np.arcsin(np.clip(axial / dist, 0.0, 1.0))
        dsigned = np.array([-ct, r * st, 0.0])       # d(signed)/d(r,theta,phi)
        daxial = sign[None, :] * dsigned[:, None]
        denom = dist * np.sqrt(np.clip(1.0 - (axial / dist) ** 2, 1e-30, None))
        delev = (daxial - (axial / dist)[None, :] * ddist) / denom[None, :]
        jac = jac + (h * profile.amplitude_log_derivative(elev))[None, :] * delev

    return jac


def fd_jacobian(ue: UePosition, cfg: PanelConfig,
                profile: RadiationProfile = ISOTROPIC,
                step: float = 1e-6) -> np.ndarray:
    """Central-difference channel Jacobian, the oracle for the analytic one.

    ``step`` is relative: the actual increment is step * r for the range row
    and step * 1 rad for the angle rows.  Perturbed positions are evaluated
    through the raw kernel so boundary angles (phi = 0, pi) stay usable.
    """
    if not step > 0:
        raise ValueError(f"step must be positive, got {step!r}")
    scales = np.array([ue.r, _FD_ANGLE_SCALE, _FD_ANGLE_SCALE]) * step
    base = ue.as_array()
    rows = []
    for k in range(3):
        hi = base.copy()
        lo = base.copy()
        hi[k] += scales[k]
        lo[k] -= scales[k]
        f_hi = channel_batch(hi[0], hi[1], hi[2], cfg, profile)
        f_lo = channel_batch(lo[0], lo[1], lo[2], cfg, profile)
        rows.append((f_hi - f_lo) / (2.0 * scales[k]))
    return np.stack(rows, axis=0)
