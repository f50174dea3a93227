"""Circuit-compliant analog combining model of the metasurface receiver.

The analog combiner seen at the RF-chain outputs is

    W_rx = P_sa^H (W_ta + W_mc)^{-1}

where P_sa carries the in-guide propagation from each feed port to its
elements, W_mc the mutual coupling between elements (through free space and,
for elements sharing a guide, through the guide), and W_ta the diagonal
termination-admittance matrix whose inverse entries live on the Lorentzian
codebook {0.5 (j + e^{j phi}), phi in [-pi/2, pi/2]}.

Because the exact inverse is expensive and opaque to optimise through, the
model is also exposed through its truncated-series approximations: expanding
(W_ta + W_mc)^{-1} around the uncoupled receiver gives

    order 1:  diag(w)
    order 2:  diag(w) - diag(w) W_mc diag(w)
    order k:  diag(w) sum_{m=0}^{k-1} (-W_mc diag(w))^m

with w the Lorentzian weights.  The series converges only when the spectral
radius of W_mc diag(w) is below one, i.e. when coupling is weak relative to
the terminations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, SingularityError
from .geometry import DerivedConstants, PanelConfig, Position3D, element_grid

# Phases are clamped away from -pi/2 (zero weight) whenever the termination
# matrix itself must be inverted; solvers honour the same clamp.
PHASE_CLAMP = 1e-6

# |sin(k_x S)| below this is treated as an exact guide resonance.
_RESONANCE_TOL = 1e-12


def lorentzian_weight(phi):
    """Lorentzian termination weight 0.5 (j + e^{j phi}).

    Valid phases live in [-pi/2, pi/2]; the weights trace the circle of
    radius 0.5 centred at 0.5j, from 0 (phi = -pi/2) to j (phi = pi/2).
    """
    phi = np.asarray(phi, dtype=float)
    if np.any(phi < -math.pi / 2) or np.any(phi > math.pi / 2):
        raise ValueError("phase outside the Lorentzian codebook [-pi/2, pi/2]")
    w = 0.5 * (1j + np.exp(1j * phi))
    return complex(w) if w.ndim == 0 else w


@dataclass(frozen=True)
class TerminationState:
    """Tunable phases of all metamaterial terminations, canonical order."""

    phases: np.ndarray

    def __post_init__(self):
        phases = np.array(self.phases, dtype=float)
        if phases.ndim != 1:
            raise ConfigError("phases must be a 1-D vector")
        if np.any(phases < -math.pi / 2) or np.any(phases > math.pi / 2):
            raise ConfigError("termination phases must lie in [-pi/2, pi/2]")
        phases.setflags(write=False)
        object.__setattr__(self, "phases", phases)

    def weights(self) -> np.ndarray:
        return lorentzian_weight(self.phases)

    def clamped(self, clamp: float = PHASE_CLAMP) -> "TerminationState":
        """Copy with phases pushed above -pi/2 so every weight is nonzero."""
        return TerminationState(np.maximum(self.phases, -math.pi / 2 + clamp))


@dataclass(frozen=True)
class AnalogBeamformer:
    """Analog combining matrix (n_rf x N) plus the model order that built it.

    Order 0 denotes the exact circuit inverse; order k >= 1 the k-term
    truncated series.
    """

    matrix: np.ndarray
    order: int


def _free_space_kernel(r, dz, k):
    """zz-component free-space kernel; r, dz broadcastable arrays, r > 0."""
    r2 = r * r
    dz2 = dz * dz
    t1 = (r2 - dz2) / r2 - 1j * (r2 - 3.0 * dz2) / (r2 * r * k)
    t2 = (r2 - 3.0 * dz2) / (r2 * r2 * k * k)
    return t1 * t2 * np.exp(-1j * k * r) / (4.0 * math.pi * r)


def green_free_space(p: Position3D, q: Position3D, k0: float) -> complex:
    """Free-space coupling kernel between two element positions.

    Depends only on the separation R and the squared z offset, hence
    symmetric in its arguments; singular at R = 0.
    """
    dx, dy, dz = p.x - q.x, p.y - q.y, p.z - q.z
    r = math.sqrt(dx * dx + dy * dy + dz * dz)
    if r == 0.0:
        raise SingularityError("free-space kernel is singular at coincident points")
    return complex(_free_space_kernel(r, dz, k0))


def _waveguide_kernel(ell_p, ell_q, t_p, t_q, consts: DerivedConstants,
                      cfg: PanelConfig):
    """In-guide kernel; ell_* longitudinal and t_* transverse coordinates."""
    a, b, s = cfg.wg_a, cfg.wg_b, cfg.wg_len
    kx, k = consts.k_x, consts.k_wg
    resonance = np.sin(kx * s)
    if abs(resonance) < _RESONANCE_TOL:
        raise SingularityError(
            f"waveguide resonance: |sin(k_x S)| = {abs(resonance):.3e}"
        )
    prefactor = (
        -kx * np.sin(math.pi * t_p / a) * np.sin(math.pi * t_q / a)
        / (a * b * k * k * resonance)
    )
    return prefactor * (
        np.cos(kx * (ell_q + ell_p - s))
        + np.cos(kx * (s - np.abs(ell_p - ell_q)))
    )


def green_waveguide(p: Position3D, q: Position3D, consts: DerivedConstants,
                    cfg: PanelConfig) -> complex:
    """In-guide coupling kernel between two points of the same waveguide.

    The points are given in guide coordinates: ``x`` runs along the guide
    axis (panel z for this layout) and ``z`` across the guide width, so the
    transverse sine profile vanishes at the walls z = 0 and z = a.
    """
    return complex(_waveguide_kernel(p.x, q.x, p.z, q.z, consts, cfg))


def _element_longitudinal(cfg: PanelConfig) -> np.ndarray:
    """In-guide longitudinal coordinates of one strip's elements."""
    return np.arange(cfg.n_e) * cfg.d_e


def build_propagation(cfg: PanelConfig, consts: DerivedConstants) -> np.ndarray:
    """Port-to-element propagation matrix P_sa, shape (N, n_rf).

    Entry (m, i) is j omega G_sa between element m and the feed port of strip
    i when m belongs to strip i, and zero otherwise (different guides share
    no RF chain).  All strips are geometrically identical, so one in-guide
    column is computed and placed block-diagonally.
    """
    t_mid = cfg.wg_a / 2.0
    ells = _element_longitudinal(cfg)
    column = 1j * consts.omega * _waveguide_kernel(
        ells, -cfg.port_offset, t_mid, t_mid, consts, cfg
    )
    p_sa = np.zeros((cfg.n_elements, cfg.n_rf), dtype=complex)
    for i in range(cfg.n_rf):
        p_sa[i * cfg.n_e:(i + 1) * cfg.n_e, i] = column
    return p_sa


def build_coupling(cfg: PanelConfig, consts: DerivedConstants) -> np.ndarray:
    """Mutual-coupling matrix W_mc, shape (N, N), symmetric.

    Off-diagonal entries are j omega eps (2 G_mc + G_sa) for same-strip pairs
    and j omega eps 2 G_mc across strips.  The free-space kernel is singular
    at zero separation, so the diagonal keeps only the in-guide kernel
    evaluated at the configured self separation along the guide axis.
    """
    pos = element_grid(cfg)
    diff = pos[:, None, :] - pos[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    np.fill_diagonal(dist, 1.0)  # placeholder, diagonal overwritten below
    g_mc = _free_space_kernel(dist, diff[:, :, 2], consts.k0)

    kernel = 2.0 * g_mc

    t_mid = cfg.wg_a / 2.0
    ells = _element_longitudinal(cfg)
    g_sa_block = _waveguide_kernel(
        ells[:, None], ells[None, :], t_mid, t_mid, consts, cfg
    )
    for i in range(cfg.n_rf):
        sl = slice(i * cfg.n_e, (i + 1) * cfg.n_e)
        kernel[sl, sl] += g_sa_block

    self_term = _waveguide_kernel(
        ells, ells + cfg.self_coupling_sep, t_mid, t_mid, consts, cfg
    )
    kernel[np.arange(cfg.n_elements), np.arange(cfg.n_elements)] = np.tile(
        self_term, cfg.n_rf
    )
    return 1j * consts.omega * consts.eps * kernel


def _series_operator(w: np.ndarray, w_mc: np.ndarray, order: int) -> np.ndarray:
    """Truncated-series stand-in for (W_ta + W_mc)^{-1} at the given order."""
    total = np.diag(w).astype(complex)
    term = total.copy()
    for _ in range(order - 1):
        term = -(term @ w_mc) * w[None, :]
        total = total + term
    return total


def analog_bf(cfg: PanelConfig, p_sa: np.ndarray, w_mc: np.ndarray | None,
              state: TerminationState, order: int) -> AnalogBeamformer:
    """Analog combining matrix for a termination state at a model order.

    Order 0 solves the exact circuit equation (requires every weight nonzero
    so the termination matrix exists, and a non-singular sum); order 1
    reduces to P_sa^H diag(w), ignoring coupling entirely; order k >= 2 adds
    k - 1 coupling corrections of the truncated series.
    """
    if order < 0:
        raise ValueError(f"order must be >= 0, got {order}")
    if order != 1 and w_mc is None:
        raise ValueError("w_mc is required for every order except 1")
    w = state.weights()

    if order == 0:
        w = state.clamped().weights()
        m = np.diag(1.0 / w) + w_mc
        try:
            solved = np.linalg.solve(m.T, p_sa.conj())
        except np.linalg.LinAlgError as exc:
            raise SingularityError(f"circuit matrix is singular: {exc}") from exc
        return AnalogBeamformer(matrix=solved.T, order=0)

    if np.any(w == 0):
        raise SingularityError(
            "termination weight is zero (phase -pi/2); the termination "
            "matrix has no inverse"
        )
    if order == 1:
        matrix = p_sa.conj().T * w[None, :]
    else:
        matrix = p_sa.conj().T @ _series_operator(w, w_mc, order)
    return AnalogBeamformer(matrix=matrix, order=order)


def approx_error(cfg: PanelConfig, w_mc: np.ndarray, state: TerminationState,
                 order: int) -> float:
    """Squared Frobenius distance between the exact circuit inverse and its
    truncated-series approximation of the given order."""
    if order < 1:
        raise ValueError(f"order must be >= 1, got {order}")
    w = state.clamped().weights()
    exact = np.linalg.inv(np.diag(1.0 / w) + w_mc)
    approx = _series_operator(w, w_mc, order)
    return float(np.linalg.norm(exact - approx, "fro") ** 2)


def coupling_spectral_radius(w_mc: np.ndarray, state: TerminationState) -> float:
    """Spectral radius of W_mc diag(w), the series convergence factor."""
    m = w_mc * state.weights()[None, :]
    return float(np.max(np.abs(np.linalg.eigvals(m))))
