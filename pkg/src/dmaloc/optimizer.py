"""Hybrid analog/digital beamforming design for localization.

The design objective is the Rayleigh quotient of the channel design matrix A
over the effective element-domain combiner W^H v, whose unconstrained
maximiser is the scaled leading eigenvector vtilde_opt.  The hybrid weights
are then obtained by alternating two exact sub-steps on the factorisation
residual || vtilde_opt - W^H v ||^2:

* digital step: least-squares combiner v = (W W^H)^{-1} W vtilde_opt;
* analog step: per-element termination phases from closed-form candidate
  sets evaluated against the exact per-element objective.

The order-1 per-element objective decouples exactly, so the order-1 sweep is
a true block minimiser and the residual is monotone.  The order-2 objective
couples elements through the off-diagonal coupling terms held at their
freshest values (Gauss-Seidel, fixed index order), so monotonicity is only
empirical.  Two reference architectures share the same machinery: an
idealized coupling-free metasurface and a half-wavelength-spaced
phase-shifter combiner with unit-modulus weights.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field

import numpy as np

from .channel import ISOTROPIC, RadiationProfile, UePosition, channel_jacobian
from .circuit import (
    PHASE_CLAMP,
    AnalogBeamformer,
    TerminationState,
    analog_bf,
    build_coupling,
    build_propagation,
    lorentzian_weight,
)
from .crb import design_matrix
from .errors import DegenerateDesignError
from .geometry import PanelConfig, derive_constants

BASELINE_KINDS = ("ideal-dma", "hbf-halfwave")

_HALF_PI = math.pi / 2
_DEGENERATE_DIAG = 1e-14   # |W_mc[n,n]| below this fraction of ||W_mc|| falls back
_COARSE_GRID = 64          # fallback grid size for degenerate order-2 elements
_DENSE_GRID = 32769        # grid_check augmentation, denser than the test oracles


@dataclass(frozen=True)
class SolverOptions:
    """Alternating-design controls.

    ``grid_check`` augments every per-element candidate set with a dense
    phase grid, bounding any gap left by the closed-form candidates at the
    cost of extra evaluations.
    """

    order: int = 2
    max_iters: int = 50
    rel_tol: float = 1e-6
    grid_check: bool = False

    def __post_init__(self):
        if self.order not in (1, 2):
            raise ValueError(f"order must be 1 or 2, got {self.order}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if not self.rel_tol > 0:
            raise ValueError(f"rel_tol must be positive, got {self.rel_tol}")


@dataclass(frozen=True)
class BfSolution:
    """Designed beamforming weights and the diagnostics of the run.

    Metasurface variants store the phases as a validated
    :class:`~dmaloc.circuit.TerminationState`; the unit-modulus phase-shifter
    baseline stores a plain array since its phases are unconstrained.
    """

    phases: TerminationState | np.ndarray
    v: np.ndarray
    vtilde_opt: np.ndarray
    residual: float
    objective: float
    iterations: int
    residual_history: tuple[float, ...] = field(default=())

    def phase_vector(self) -> np.ndarray:
        if isinstance(self.phases, TerminationState):
            return np.asarray(self.phases.phases)
        return np.asarray(self.phases)


def rayleigh_quotient(a: np.ndarray, x: np.ndarray) -> float:
    """Re{x^H A x} / ||x||^2, zero for the zero vector."""
    norm2 = float(np.real(np.vdot(x, x)))
    if norm2 == 0.0:
        return 0.0
    return float(np.real(np.vdot(x, a @ x))) / norm2


def rayleigh_opt(a: np.ndarray) -> tuple[np.ndarray, float]:
    """Leading eigenvector of the Hermitian PSD design matrix, scaled by the
    square root of its eigenvalue.

    The eigenvector phase is fixed by making its largest-magnitude entry real
    positive, so equal inputs give bit-equal outputs.
    """
    a = np.asarray(a, dtype=complex)
    if not np.any(a):
        raise DegenerateDesignError("zero design matrix")
    eigvals, eigvecs = np.linalg.eigh(a)
    sigma1 = float(eigvals[-1])
    u1 = eigvecs[:, -1]
    pivot = u1[np.argmax(np.abs(u1))]
    u1 = u1 * (abs(pivot) / pivot)
    return u1 * math.sqrt(sigma1), sigma1


def digital_ls(analog, vtilde_opt: np.ndarray) -> np.ndarray:
    """Least-squares digital combiner v = (W W^H)^{-1} W vtilde_opt."""
    w = np.asarray(getattr(analog, "matrix", analog), dtype=complex)
    gram = w @ w.conj().T
    try:
        if np.linalg.cond(gram) > 1e14:
            raise DegenerateDesignError("rank-deficient analog matrix")
        return np.linalg.solve(gram, w @ vtilde_opt)
    except np.linalg.LinAlgError as exc:
        raise DegenerateDesignError(f"rank-deficient analog matrix: {exc}") from exc


def _f1(phi: float, vt_n: complex, a_n: complex) -> float:
    """Exact order-1 per-element objective |vt_n - conj(w(phi)) a_n|^2."""
    w = 0.5 * (1j + cmath.exp(1j * phi))
    return abs(vt_n - w.conjugate() * a_n) ** 2


def _f2(phi: float, vt_n: complex, a_n: complex, m_nn: complex,
        b: complex) -> float:
    """Exact order-2 per-element objective at frozen cross terms b."""
    wc = (0.5 * (1j + cmath.exp(1j * phi))).conjugate()
    return abs(vt_n - wc * (1.0 - m_nn.conjugate() * wc) * a_n + wc * b) ** 2


def _stationary_candidates(vt_n: complex, a_n: complex) -> list[float]:
    """Interior critical points for the order-1 objective.

    Includes both the condensed-expansion critical point
    arctan(Im beta / Re beta) with beta = conj(vt_n) a_n, and the stationary
    point of the exact objective, which keeps the sin(phi) |a_n|^2 / 2 term
    the condensed expansion drops.
    """
    beta = vt_n.conjugate() * a_n
    out = []
    if beta.real != 0.0:
        out.append(math.atan(beta.imag / beta.real))
        out.append(math.atan((beta.imag - 0.5 * abs(a_n) ** 2) / beta.real))
    return out


def _pick(candidates, objective, lower: float) -> float:
    """Smallest-|phi| argmin of the objective over in-range candidates."""
    best_phi = lower
    best = (objective(lower), abs(lower))
    for phi in candidates:
        if not (lower <= phi <= _HALF_PI) or not math.isfinite(phi):
            continue
        key = (objective(phi), abs(phi))
        if key < best:
            best = key
            best_phi = phi
    return best_phi


def _dense_candidates(lower: float) -> np.ndarray:
    return np.linspace(lower, _HALF_PI, _DENSE_GRID)


def phase_step_order1(vtilde_opt: np.ndarray, a: np.ndarray, n: int,
                      lower: float = -_HALF_PI,
                      grid_check: bool = False) -> float:
    """Optimal codebook phase of element n under the order-1 model.

    ``a`` is the port-domain excitation P_sa v and ``n`` a 0-based element
    index.  When the element is unexcited the objective is constant and the
    tie-break returns phase 0.  ``lower`` lets the alternating solver keep
    phases strictly above -pi/2.
    """
    vt_n = complex(vtilde_opt[n])
    a_n = complex(a[n])
    if a_n == 0.0:
        return 0.0
    candidates = [_HALF_PI, *_stationary_candidates(vt_n, a_n)]
    if grid_check:
        candidates.extend(_dense_candidates(lower))
    return _pick(candidates, lambda phi: _f1(phi, vt_n, a_n), lower)


def phase_step_order2(vtilde_opt: np.ndarray, a: np.ndarray,
                      w_mc: np.ndarray, phases: np.ndarray, n: int,
                      lower: float = -_HALF_PI,
                      grid_check: bool = False,
                      wmc_norm: float | None = None) -> float:
    """Optimal codebook phase of element n under the order-2 model.

    The cross-element coupling term b is evaluated at the phases currently
    stored in ``phases`` (Gauss-Seidel style).  The closed-form candidates
    solve the quadratic stationarity condition in the candidate weight; when
    the diagonal coupling or the excitation degenerates the step falls back
    to the order-1 candidates of the effective pair plus a coarse grid.  A
    zero-coupling instance delegates to the order-1 step exactly.
    """
    vt_n = complex(vtilde_opt[n])
    a_n = complex(a[n])
    m_nn = complex(w_mc[n, n])

    w_bar = np.conj(lorentzian_weight(phases))
    terms = np.conj(w_mc[n, :]) * w_bar * a
    b = complex(terms.sum() - terms[n])

    if m_nn == 0.0 and b == 0.0:
        return phase_step_order1(vtilde_opt, a, n, lower=lower,
                                 grid_check=grid_check)

    if wmc_norm is None:
        wmc_norm = float(np.linalg.norm(w_mc))
    degenerate = abs(m_nn) < _DEGENERATE_DIAG * wmc_norm or a_n == 0.0

    candidates: list[float] = [_HALF_PI]
    if degenerate:
        # m_nn -> 0 reduces the objective to |vt_n - conj(w)(a_n - b)|^2.
        candidates.extend(_stationary_candidates(vt_n, a_n - b))
        candidates.extend(_stationary_candidates(vt_n, a_n))
        candidates.extend(np.linspace(lower, _HALF_PI, _COARSE_GRID))
    else:
        ac = a_n.conjugate()
        bc = b.conjugate()
        disc = cmath.sqrt(
            ac * ac - 2.0 * ac * bc - 4.0 * vt_n.conjugate() * m_nn * ac + bc * bc
        )
        denom = 2.0 * m_nn * ac
        roots = ((ac - bc + disc) / denom, (ac - bc - disc) / denom,
                 (ac - bc) / denom)
        for x in roots:
            if x.real != 0.0:
                # Lorentzian geometry: tan(phi) = (Im w - 0.5) / Re w.
                candidates.append(math.atan((x.imag - 0.5) / x.real))
                candidates.append(math.atan(x.imag / x.real))
    if grid_check:
        candidates.extend(_dense_candidates(lower))

    return _pick(candidates, lambda phi: _f2(phi, vt_n, a_n, m_nn, b), lower)


def ideal_dma_matrix(cfg: PanelConfig, phases: np.ndarray) -> np.ndarray:
    """Block-diagonal analog matrix of the idealized coupling-free
    metasurface: row i holds the Lorentzian weights of strip i."""
    w = lorentzian_weight(phases)
    out = np.zeros((cfg.n_rf, cfg.n_elements), dtype=complex)
    for i in range(cfg.n_rf):
        sl = slice(i * cfg.n_e, (i + 1) * cfg.n_e)
        out[i, sl] = w[sl]
    return out


def hbf_matrix(cfg: PanelConfig, phases: np.ndarray) -> np.ndarray:
    """Block-diagonal unit-modulus analog matrix of the phase-shifter
    combiner; phases are unconstrained in (-pi, pi]."""
    out = np.zeros((cfg.n_rf, cfg.n_elements), dtype=complex)
    w = np.exp(1j * np.asarray(phases, dtype=float))
    for i in range(cfg.n_rf):
        sl = slice(i * cfg.n_e, (i + 1) * cfg.n_e)
        out[i, sl] = w[sl]
    return out


def _replicate(cfg: PanelConfig, v: np.ndarray) -> np.ndarray:
    """Port excitation of a block-diagonal architecture: strip i's elements
    all see v_i."""
    return np.repeat(np.asarray(v, dtype=complex), cfg.n_e)


def _alternate(vtilde_opt, a_matrix_of, excitation_of, sweep, phases,
               max_iters, rel_tol):
    """Shared alternating loop; returns best iterate and residual history.

    ``a_matrix_of(phases)`` builds the analog matrix, ``excitation_of(v)``
    the per-element excitation, ``sweep(phases, a, v)`` updates phases in
    place.  The residual is recorded once per outer iteration, after the
    sweep, and the best iterate over the whole run is returned.
    """
    history: list[float] = []
    best = None
    previous = math.inf
    iterations = 0
    v = None
    for iterations in range(1, max_iters + 1):
        w = a_matrix_of(phases)
        v = digital_ls(w, vtilde_opt)
        a = excitation_of(v)
        sweep(phases, a, v)
        w = a_matrix_of(phases)
        residual = float(
            np.linalg.norm(vtilde_opt - w.conj().T @ v) ** 2
        )
        history.append(residual)
        if best is None or residual < best[0]:
            best = (residual, phases.copy(), v, w)
        if abs(previous - residual) < rel_tol * max(previous, 1e-300):
            break
        previous = residual
    return best, history, iterations


def design(ue: UePosition, cfg: PanelConfig,
           opts: SolverOptions | None = None,
           profile: RadiationProfile = ISOTROPIC) -> BfSolution:
    """Design the metasurface termination phases and digital combiner that
    maximise the localization information at a user position.

    Runs the Rayleigh-quotient relaxation, then alternates the least-squares
    digital step with full per-element phase sweeps under the model order
    from ``opts`` until the residual stalls or ``max_iters`` is reached.
    Phases start at zero and stay strictly inside the codebook (clamped above
    -pi/2) so the circuit matrices stay invertible.
    """
    opts = opts or SolverOptions()
    consts = derive_constants(cfg)
    p_sa = build_propagation(cfg, consts)
    w_mc = build_coupling(cfg, consts) if opts.order == 2 else None
    wmc_norm = float(np.linalg.norm(w_mc)) if w_mc is not None else 0.0

    jac = channel_jacobian(ue, cfg, profile)
    a_mat = design_matrix(jac)
    vtilde_opt, _ = rayleigh_opt(a_mat)

    lower = -_HALF_PI + PHASE_CLAMP
    phases = np.zeros(cfg.n_elements)

    def matrix_of(ph):
        return analog_bf(cfg, p_sa, w_mc, TerminationState(ph), opts.order).matrix

    def sweep(ph, a, v):
        for n in range(cfg.n_elements):
            if opts.order == 1:
                ph[n] = phase_step_order1(vtilde_opt, a, n, lower=lower,
                                          grid_check=opts.grid_check)
            else:
                ph[n] = phase_step_order2(vtilde_opt, a, w_mc, ph, n,
                                          lower=lower,
                                          grid_check=opts.grid_check,
                                          wmc_norm=wmc_norm)

    best, history, iterations = _alternate(
        vtilde_opt, matrix_of, lambda v: p_sa @ v, sweep, phases,
        opts.max_iters, opts.rel_tol,
    )
    residual, best_phases, v, w = best
    achieved = w.conj().T @ v
    return BfSolution(
        phases=TerminationState(best_phases),
        v=v,
        vtilde_opt=vtilde_opt,
        residual=residual,
        objective=rayleigh_quotient(a_mat, achieved),
        iterations=iterations,
        residual_history=tuple(history),
    )


def baseline(ue: UePosition, cfg: PanelConfig, kind: str,
             opts: SolverOptions | None = None,
             profile: RadiationProfile = ISOTROPIC) -> tuple[BfSolution, PanelConfig]:
    """Design a reference architecture under the same objective.

    ``ideal-dma`` is the coupling-free block-diagonal metasurface at
    fifth-wavelength element pitch with Lorentzian weights; ``hbf-halfwave``
    the half-wavelength phase-shifter combiner with unit-modulus weights and
    the exact per-element phase alignment arg(conj(vtilde_n) a_n).  Returns
    the solution together with the panel actually used, since the element
    pitch differs from the metasurface configuration.
    """
    if kind not in BASELINE_KINDS:
        raise ValueError(f"unknown baseline kind {kind!r}; expected one of {BASELINE_KINDS}")
    opts = opts or SolverOptions()
    lam = cfg.wavelength
    pitch = lam / 5.0 if kind == "ideal-dma" else lam / 2.0
    bcfg = PanelConfig(n_rf=cfg.n_rf, n_e=cfg.n_e, freq=cfg.freq,
                       d_rf=cfg.d_rf, d_e=pitch, eps_r=cfg.eps_r,
                       mu_r=cfg.mu_r)

    jac = channel_jacobian(ue, bcfg, profile)
    a_mat = design_matrix(jac)
    vtilde_opt, _ = rayleigh_opt(a_mat)

    if kind == "ideal-dma":
        lower = -_HALF_PI + PHASE_CLAMP
        matrix_of = lambda ph: ideal_dma_matrix(bcfg, ph)

        def sweep(ph, a, v):
            for n in range(bcfg.n_elements):
                ph[n] = phase_step_order1(vtilde_opt, a, n, lower=lower,
                                          grid_check=opts.grid_check)
    else:
        matrix_of = lambda ph: hbf_matrix(bcfg, ph)

        def sweep(ph, a, v):
            for n in range(bcfg.n_elements):
                prod = vtilde_opt[n].conjugate() * a[n]
                ph[n] = cmath.phase(prod) if prod != 0.0 else 0.0

    phases = np.zeros(bcfg.n_elements)
    best, history, iterations = _alternate(
        vtilde_opt, matrix_of, lambda v: _replicate(bcfg, v), sweep, phases,
        opts.max_iters, opts.rel_tol,
    )
    residual, best_phases, v, w = best
    achieved = w.conj().T @ v
    if kind == "ideal-dma":
        state: TerminationState | np.ndarray = TerminationState(best_phases)
    else:
        # Unit-modulus phases live outside the Lorentzian codebook.
        state = best_phases
    solution = BfSolution(
        phases=state,
        v=v,
        vtilde_opt=vtilde_opt,
        residual=residual,
        objective=rayleigh_quotient(a_mat, achieved),
        iterations=iterations,
        residual_history=tuple(history),
    )
    return solution, bcfg
