"""Pilot synthesis, maximum-likelihood estimation and sweep experiments.

The combined baseband output of one pilot block is

    y(t) = v^H W h^H s(t) + v^H W n(t),  t = 1..T,

with constant-modulus pilots and i.i.d. circularly-symmetric element noise.
The position estimate is the grid argmin of || y - g(zeta) s ||^2 with
g(zeta) = v^H W h(zeta)^H, refined by re-gridding around the incumbent.

Elevation is treated as known by default (a single-node theta axis), matching
the fixed-elevation evaluation geometry; the companion error bound is then
the (r, phi) marginal of the Fisher matrix — the full 3-parameter bound does
not exist for a single combined output (see :mod:`dmaloc.crb`).

Per-trial noise generators derive from (master seed, scenario, sweep point,
trial) through ``numpy``'s SeedSequence, so results do not depend on how
trials are scheduled across workers.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from math import fsum

import numpy as np

from .channel import (
    ISOTROPIC,
    RadiationProfile,
    UePosition,
    channel,
    channel_batch,
    channel_jacobian,
    ue_to_cartesian,
)
from .circuit import analog_bf, build_coupling, build_propagation
from .crb import NoiseModel, PilotConfig, fim, peb_subset
from .errors import ConfigError
from .geometry import PanelConfig, derive_constants
from .optimizer import SolverOptions, baseline, design, hbf_matrix, ideal_dma_matrix
from .units import watts_to_dbm

DMA_VARIANTS = ("dma-order1", "dma-order2")
ALL_VARIANTS = DMA_VARIANTS + ("ideal-dma", "hbf-halfwave")

_REFINE_MAX_NODES = 21


@dataclass(frozen=True)
class SearchGrid:
    """Maximum-likelihood search grid over (r, theta, phi).

    Axes must be sorted and non-empty; a single-node axis marks the
    coordinate as known.  Refinement re-grids ``refine_rounds`` times around
    the incumbent, each round shrinking every searched axis span by
    ``refine_shrink``.
    """

    r_axis: np.ndarray
    theta_axis: np.ndarray
    phi_axis: np.ndarray
    refine_rounds: int = 3
    refine_shrink: float = 0.2

    def __post_init__(self):
        for name in ("r_axis", "theta_axis", "phi_axis"):
            axis = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            if axis.size == 0:
                raise ConfigError(f"{name} must not be empty")
            if np.any(np.diff(axis) <= 0) and axis.size > 1:
                raise ConfigError(f"{name} must be strictly increasing")
            axis.setflags(write=False)
            object.__setattr__(self, name, axis)
        if self.refine_rounds < 0:
            raise ConfigError("refine_rounds must be >= 0")
        if not 0.0 < self.refine_shrink < 1.0:
            raise ConfigError("refine_shrink must lie in (0, 1)")

    def estimated_params(self) -> tuple[int, ...]:
        """Indices of (r, theta, phi) actually searched (multi-node axes)."""
        axes = (self.r_axis, self.theta_axis, self.phi_axis)
        return tuple(i for i, ax in enumerate(axes) if ax.size > 1)


def default_grid(theta: float, r_span: tuple[float, float] = (1.0, 30.0),
                 r_points: int = 60, phi_points: int = 121,
                 refine_rounds: int = 3, refine_shrink: float = 0.2) -> SearchGrid:
    """Default evaluation grid: log-spaced ranges, uniform azimuth over the
    half-plane, elevation known."""
    return SearchGrid(
        r_axis=np.geomspace(r_span[0], r_span[1], r_points),
        theta_axis=np.array([theta]),
        phi_axis=np.linspace(0.0, math.pi, phi_points),
        refine_rounds=refine_rounds,
        refine_shrink=refine_shrink,
    )


@dataclass(frozen=True)
class Scenario:
    """Everything needed to synthesize and invert one pilot block."""

    cfg: PanelConfig
    ue: UePosition
    w_rx: np.ndarray
    v: np.ndarray
    pilots: PilotConfig
    noise: NoiseModel
    profile: RadiationProfile = ISOTROPIC


@dataclass(frozen=True)
class ReceivedBlock:
    """Length-T combined output samples plus the scenario that produced them."""

    samples: np.ndarray
    scenario: Scenario
    seed: object


def synthesize(ue: UePosition, cfg: PanelConfig, w_rx: np.ndarray,
               v: np.ndarray, pilots: PilotConfig, noise: NoiseModel,
               seed, profile: RadiationProfile = ISOTROPIC) -> ReceivedBlock:
    """Draw one received pilot block from a seeded generator.

    ``seed`` may be an int or a tuple of ints; equal seeds give bit-equal
    blocks.  The element noise is circularly-symmetric complex Gaussian with
    variance sigma^2 per element, so a zero-variance model reproduces the
    noiseless mean exactly.
    """
    w_rx = np.asarray(getattr(w_rx, "matrix", w_rx), dtype=complex)
    v = np.asarray(v, dtype=complex)
    combiner = v.conj() @ w_rx                       # v^H W, shape (N,)
    h = channel(ue, cfg, profile)
    s = pilots.pilot_vector()
    rng = np.random.default_rng(seed)
    scale = math.sqrt(noise.sigma2 / 2.0)
    n_mat = scale * (
        rng.standard_normal((cfg.n_elements, pilots.t_pilots))
        + 1j * rng.standard_normal((cfg.n_elements, pilots.t_pilots))
    )
    samples = (combiner @ h.conj()) * s + combiner @ n_mat
    scenario = Scenario(cfg=cfg, ue=ue, w_rx=w_rx, v=v, pilots=pilots,
                        noise=noise, profile=profile)
    return ReceivedBlock(samples=samples, scenario=scenario, seed=seed)


_GAIN_CHUNK = 16384  # mesh nodes per chunk when tabulating the gain map


def _gain_nodes(cfg: PanelConfig, combiner: np.ndarray, r_nodes, theta_nodes,
                phi_nodes, profile: RadiationProfile) -> np.ndarray:
    """Combined complex gain g(zeta) = v^H W h(zeta)^H on a node mesh.

    Evaluated in chunks so dense meshes (needed to sample the carrier-phase
    structure of the likelihood) stay within memory.
    """
    rr, tt, pp = np.meshgrid(r_nodes, theta_nodes, phi_nodes, indexing="ij")
    shape = rr.shape
    flat = (rr.reshape(-1), tt.reshape(-1), pp.reshape(-1))
    out = np.empty(rr.size, dtype=complex)
    for start in range(0, rr.size, _GAIN_CHUNK):
        sl = slice(start, start + _GAIN_CHUNK)
        h = channel_batch(flat[0][sl], flat[1][sl], flat[2][sl], cfg, profile)
        out[sl] = h.conj() @ combiner
    return out.reshape(shape)


@dataclass(frozen=True)
class GainMap:
    """Cached coarse-grid gains for repeated estimation on one scenario.

    The gain map depends only on the combiner and the grid, not on the noise
    draw or the transmit power, so it can be shared by every trial of a
    sweep cell.
    """

    grid: SearchGrid
    gains: np.ndarray
    abs2: np.ndarray


def make_gain_map(cfg: PanelConfig, w_rx: np.ndarray, v: np.ndarray,
                  grid: SearchGrid,
                  profile: RadiationProfile = ISOTROPIC) -> GainMap:
    combiner = np.asarray(v, dtype=complex).conj() @ np.asarray(
        getattr(w_rx, "matrix", w_rx), dtype=complex
    )
    gains = _gain_nodes(cfg, combiner, grid.r_axis, grid.theta_axis,
                        grid.phi_axis, profile)
    return GainMap(grid=grid, gains=gains, abs2=np.abs(gains) ** 2)


def _objective_from_gains(block_sum: complex, pilots: PilotConfig,
                          gains: np.ndarray, abs2: np.ndarray) -> np.ndarray:
    """|| y - g s ||^2 up to a g-independent constant:
    T P |g|^2 - 2 sqrt(P) Re{ sum(y) conj(g) }."""
    t, p = pilots.t_pilots, pilots.p_max
    return t * p * abs2 - 2.0 * math.sqrt(p) * np.real(block_sum * np.conj(gains))


def _bracket(axis: np.ndarray, index: int) -> tuple[float, float]:
    lo = float(axis[max(index - 1, 0)])
    hi = float(axis[min(index + 1, axis.size - 1)])
    return lo, hi


def ml_estimate(block: ReceivedBlock, grid: SearchGrid,
                gain_map: GainMap | None = None) -> UePosition:
    """Maximum-likelihood position estimate by grid search plus refinement.

    The coarse pass scans the full grid; refinement round one re-grids the
    cell bracketing the incumbent, and each further round shrinks the local
    span by ``refine_shrink``.  The best node ever encountered is returned,
    so an exact zero-residual node (noiseless data with the truth on the
    grid) is always recovered exactly.

    ``gain_map`` optionally supplies precomputed coarse-grid gains from
    :func:`make_gain_map` (they are noise- and power-independent).
    """
    sc = block.scenario
    block_sum = complex(np.sum(block.samples))
    if gain_map is None:
        gain_map = make_gain_map(sc.cfg, sc.w_rx, sc.v, grid, sc.profile)
    elif gain_map.grid is not grid and (
        gain_map.grid.r_axis.shape != grid.r_axis.shape
        or gain_map.grid.phi_axis.shape != grid.phi_axis.shape
    ):
        raise ConfigError("gain map was built for a different grid")
    combiner = sc.v.conj() @ sc.w_rx
    axes = (grid.r_axis, grid.theta_axis, grid.phi_axis)

    obj = _objective_from_gains(block_sum, sc.pilots, gain_map.gains,
                                gain_map.abs2)
    idx = np.unravel_index(int(np.argmin(obj)), obj.shape)
    best_obj = float(obj[idx])
    best_zeta = tuple(float(axes[k][idx[k]]) for k in range(3))

    searched = [k for k in range(3) if axes[k].size > 1]
    spans = {k: (lambda b: b[1] - b[0])(_bracket(axes[k], idx[k]))
             for k in searched}
    counts = {
        k: min(int(axes[k].size), _REFINE_MAX_NODES) | 1 for k in searched
    }
    for round_idx in range(grid.refine_rounds):
        local = []
        for k in range(3):
            if k not in spans:
                local.append(axes[k])
                continue
            span = spans[k] * grid.refine_shrink ** round_idx
            lo = max(best_zeta[k] - span / 2.0, float(axes[k][0]))
            hi = min(best_zeta[k] + span / 2.0, float(axes[k][-1]))
            local.append(np.linspace(lo, hi, counts[k]))
        gains = _gain_nodes(sc.cfg, combiner, *local, sc.profile)
        local_obj = _objective_from_gains(block_sum, sc.pilots, gains,
                                          np.abs(gains) ** 2)
        lidx = np.unravel_index(int(np.argmin(local_obj)), local_obj.shape)
        if float(local_obj[lidx]) < best_obj:
            best_obj = float(local_obj[lidx])
            best_zeta = tuple(float(local[k][lidx[k]]) for k in range(3))
    r, theta, phi = best_zeta
    return UePosition(r=r, theta=theta, phi=phi)


@dataclass(frozen=True)
class SweepScenario:
    """One architecture/panel/user combination for the sweep experiments."""

    label: str
    cfg: PanelConfig
    ue: UePosition
    variant: str = "dma-order2"
    opts: SolverOptions = field(default_factory=SolverOptions)
    t_pilots: int = 200
    noise: NoiseModel = field(default_factory=lambda: NoiseModel.thermal(150e3))
    grid: SearchGrid | None = None
    profile: RadiationProfile = ISOTROPIC

    def __post_init__(self):
        if self.variant not in ALL_VARIANTS:
            raise ConfigError(
                f"unknown variant {self.variant!r}; expected one of {ALL_VARIANTS}"
            )


def design_variant(ue: UePosition, cfg: PanelConfig, variant: str,
                   opts: SolverOptions,
                   profile: RadiationProfile = ISOTROPIC):
    """Design one architecture; returns (w_rx, v, cfg_used).

    The reference architectures re-pitch the panel, so the returned config
    is the one the channel must be evaluated on.
    """
    if variant in DMA_VARIANTS:
        order = 1 if variant == "dma-order1" else 2
        sol = design(ue, cfg, replace(opts, order=order), profile)
        consts = derive_constants(cfg)
        p_sa = build_propagation(cfg, consts)
        w_mc = build_coupling(cfg, consts) if order == 2 else None
        w = analog_bf(cfg, p_sa, w_mc, sol.phases, order).matrix
        return w, sol.v, cfg
    sol, bcfg = baseline(ue, cfg, variant, opts, profile)
    if variant == "ideal-dma":
        w = ideal_dma_matrix(bcfg, sol.phase_vector())
    else:
        w = hbf_matrix(bcfg, sol.phase_vector())
    return w, sol.v, bcfg


@dataclass(frozen=True)
class RmseSummary:
    """Aggregated estimation error for one (scenario, transmit power) cell."""

    label: str
    variant: str
    n_rf: int
    n_e: int
    p_max: float
    trials: int
    rmse_r: float
    rmse_theta: float
    rmse_phi: float
    rmse_param: float
    rmse_cartesian: float
    peb: float

    @property
    def p_max_dbm(self) -> float:
        return watts_to_dbm(self.p_max)


def _trial_errors(scenario: Scenario, grid: SearchGrid, seed,
                  gain_map: GainMap | None = None) -> tuple:
    block = synthesize(scenario.ue, scenario.cfg, scenario.w_rx, scenario.v,
                       scenario.pilots, scenario.noise, seed,
                       scenario.profile)
    estimate = ml_estimate(block, grid, gain_map)
    err = estimate.as_array() - scenario.ue.as_array()
    cart = ue_to_cartesian(estimate) - ue_to_cartesian(scenario.ue)
    return (err[0] ** 2, err[1] ** 2, err[2] ** 2,
            float(err @ err), float(cart @ cart))


def run_rmse(scenarios, pmax_axis, trials: int, seed: int,
             threads: int = 1) -> list[RmseSummary]:
    """Monte Carlo estimation-error sweep over transmit power.

    For each scenario the beamformer is designed once (the design objective
    is invariant to the power/noise scale), then ``trials`` independent
    pilot blocks per power point are estimated.  Error aggregation uses
    compensated summation in a fixed order, so results are identical for any
    ``threads`` count.
    """
    if trials < 1:
        raise ConfigError(f"trials must be >= 1, got {trials}")
    summaries: list[RmseSummary] = []
    for s_idx, sw in enumerate(scenarios):
        w_rx, v, cfg_used = design_variant(sw.ue, sw.cfg, sw.variant, sw.opts,
                                           sw.profile)
        grid = sw.grid if sw.grid is not None else default_grid(sw.ue.theta)
        params = grid.estimated_params()
        jac = channel_jacobian(sw.ue, cfg_used, sw.profile)
        for p_idx, p_max in enumerate(pmax_axis):
            pilots = PilotConfig(t_pilots=sw.t_pilots, p_max=float(p_max))
            scenario = Scenario(cfg=cfg_used, ue=sw.ue, w_rx=w_rx, v=v,
                                pilots=pilots, noise=sw.noise,
                                profile=sw.profile)
            information = fim(jac, w_rx, v, pilots, sw.noise)
            bound = peb_subset(information, params)

            results: list[tuple | None] = [None] * trials

            def one(t_idx: int):
                results[t_idx] = _trial_errors(
                    scenario, grid, (seed, s_idx, p_idx, t_idx)
                )

            if threads > 1:
                with ThreadPoolExecutor(max_workers=threads) as pool:
                    list(pool.map(one, range(trials)))
            else:
                for t_idx in range(trials):
                    one(t_idx)

            cols = list(zip(*results))
            means = [fsum(col) / trials for col in cols]
            summaries.append(RmseSummary(
                label=sw.label,
                variant=sw.variant,
                n_rf=cfg_used.n_rf,
                n_e=cfg_used.n_e,
                p_max=float(p_max),
                trials=trials,
                rmse_r=math.sqrt(means[0]),
                rmse_theta=math.sqrt(means[1]),
                rmse_phi=math.sqrt(means[2]),
                rmse_param=math.sqrt(means[3]),
                rmse_cartesian=math.sqrt(means[4]),
                peb=bound,
            ))
    return summaries


@dataclass(frozen=True)
class PebPoint:
    """One cell of the bound-versus-chain-count sweep."""

    variant: str
    n_rf: int
    n_e: int
    p_max: float
    peb: float


def run_peb_sweep(cfg_template: PanelConfig, nrf_axis, variants,
                  p_max: float, ue: UePosition, t_pilots: int = 200,
                  noise: NoiseModel | None = None,
                  opts: SolverOptions | None = None,
                  estimated_params: tuple[int, ...] = (0, 2),
                  profile: RadiationProfile = ISOTROPIC) -> list[PebPoint]:
    """Design every architecture at each RF-chain count and report its error
    bound at the fixed user position.

    ``estimated_params`` selects the parameter indices for the bound,
    default (r, phi) with elevation known.
    """
    noise = noise or NoiseModel.thermal(150e3)
    opts = opts or SolverOptions()
    pilots = PilotConfig(t_pilots=t_pilots, p_max=p_max)
    rows: list[PebPoint] = []
    for n_rf in nrf_axis:
        cfg = PanelConfig(n_rf=int(n_rf), n_e=cfg_template.n_e,
                          freq=cfg_template.freq, d_rf=cfg_template.d_rf,
                          d_e=cfg_template.d_e, eps_r=cfg_template.eps_r,
                          mu_r=cfg_template.mu_r)
        for variant in variants:
            w_rx, v, cfg_used = design_variant(ue, cfg, variant, opts, profile)
            jac = channel_jacobian(ue, cfg_used, profile)
            information = fim(jac, w_rx, v, pilots, noise)
            rows.append(PebPoint(
                variant=variant,
                n_rf=int(n_rf),
                n_e=cfg_used.n_e,
                p_max=p_max,
                peb=peb_subset(information, estimated_params),
            ))
    return rows
