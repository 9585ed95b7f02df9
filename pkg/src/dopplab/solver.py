"""Estimation core: differencing, Gauss-Newton WLS, ephemeris correction.

Both receivers observe pseudorange rates; single differences remove the
satellite clock terms (restoring the predicted base geometric term), double
differences against a reference satellite remove the receiver-pair clock
terms, and the correction stage estimates each satellite's along-track
position error from the base measurement, then removes its effect from both
receivers' rates so the remaining double differences are consistent with
the estimated (TLE-derived) ephemerides at any baseline.

All solution methods share one Gauss-Newton engine over the six unknowns
(terminal position and velocity); the differential baseline method adds a
seventh lumped receiver-clock-rate unknown and works on single differences.
"""

from dataclasses import dataclass, field, replace
from datetime import datetime
from typing import Optional

import numpy as np

from . import _kernels, frames
from .measurements import DopplerMeasurement, MeasurementSet, range_rate
from .orbits import OrbitState

MIN_SATELLITES_DD = 7          # L-1 rows must cover 6 unknowns
MIN_SATELLITES_DIFFERENTIAL = 8
CONDITION_LIMIT = 1e12
_DIVERGENCE_STREAK = 5


class InsufficientSatellitesError(ValueError):
    pass


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class PvState:
    """Terminal position (m) and velocity (m/s) in ECEF."""

    position: np.ndarray
    velocity: np.ndarray

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.position, self.velocity])

    @classmethod
    def from_vector(cls, x: np.ndarray) -> "PvState":
        return cls(np.array(x[:3], dtype=float), np.array(x[3:6], dtype=float))


@dataclass(frozen=True)
class SolverConfig:
    convergence_threshold: float = 1e-4
    max_iterations: int = 50
    weight_mode: str = "identity"            # identity | snr
    correction_enabled: bool = True
    outer_correction_passes: int = 1
    reference_selection: str = "highest_elevation"  # highest_elevation | max_snr | fixed_id
    reference_satellite_id: Optional[int] = None
    snr_weight_floor: float = 0.0

    def __post_init__(self):
        if self.convergence_threshold <= 0:
            raise ValueError("convergence threshold must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.outer_correction_passes < 0:
            raise ValueError("outer_correction_passes must be non-negative")
        if self.weight_mode not in ("identity", "snr"):
            raise ValueError(f"unknown weight mode {self.weight_mode!r}")
        if self.reference_selection not in ("highest_elevation", "max_snr", "fixed_id"):
            raise ValueError(f"unknown reference selection {self.reference_selection!r}")


@dataclass
class EpochSolution:
    """Result of one epoch's solve, plus solver diagnostics."""

    epoch: datetime
    state: PvState
    iterations: int
    converged: bool
    residual_rms_mps: float
    n_satellites: int
    condition: float
    reference_satellite_id: Optional[int] = None
    clock_rate_mps: Optional[float] = None   # differential method only
    correction_magnitudes_m: dict = field(default_factory=dict)
    dropped_satellites: list = field(default_factory=list)


@dataclass
class SolutionReport:
    """Per-method aggregation of epoch solutions, in epoch order."""

    method: str
    epochs: list = field(default_factory=list)

    def convergence_rate(self) -> float:
        if not self.epochs:
            return 0.0
        return sum(1 for e in self.epochs if e.converged) / len(self.epochs)


@dataclass(frozen=True)
class SatelliteCorrection:
    """Per-satellite output of the ephemeris error estimation."""

    satellite_id: int
    rate_correction_ut_mps: float
    rate_correction_base_mps: float
    sat_position_error_m: float      # signed along-track estimate
    usable: bool
    reason: str = ""


# --------------------------------------------------------------------------
# Differencing
# --------------------------------------------------------------------------

def predicted_rate(sat_est: OrbitState, x: PvState) -> float:
    """Receiver-side pseudorange-rate prediction from an estimated state."""
    return range_rate(sat_est.position, sat_est.velocity, x.position, x.velocity)


def single_difference(ut: DopplerMeasurement, base: DopplerMeasurement,
                      sat_est: OrbitState, base_pos: np.ndarray) -> float:
    """Terminal minus base rate with the predicted base term restored.

    Satellite clock terms cancel exactly because they enter both receivers'
    measurements identically.
    """
    if ut.satellite_id != base.satellite_id:
        raise ValueError("single difference needs the same satellite at both receivers")
    if ut.epoch != base.epoch:
        raise ValueError("single difference needs a shared epoch")
    restored = range_rate(sat_est.position, sat_est.velocity, base_pos, np.zeros(3))
    return ut.pseudorange_rate_mps - base.pseudorange_rate_mps + restored


def double_difference(sd_ref: float, sd_l: float) -> float:
    """Reference-satellite single difference minus another satellite's."""
    return sd_ref - sd_l


def predicted_double_difference(sat_ref_est: OrbitState, sat_l_est: OrbitState,
                                x0: PvState) -> float:
    return predicted_rate(sat_ref_est, x0) - predicted_rate(sat_l_est, x0)


# --------------------------------------------------------------------------
# Linearization and the weighted least-squares step
# --------------------------------------------------------------------------

def _rates_partials(pos: np.ndarray, vel: np.ndarray, x: np.ndarray):
    """Per-satellite predicted rates, position partials g, and LOS units.

    ``pos``/``vel`` are (L, 3) estimated states, ``x`` the stacked receiver
    state. g is the gradient of the predicted rate w.r.t. receiver position.
    """
    ranges, rates, units = _kernels.los_range_rate(pos, vel, x[:3], x[3:6])
    if np.any(ranges == 0.0):
        raise GeometryError("receiver estimate coincides with a satellite")
    dv = vel - x[3:6]
    g = (np.sum(dv * units, axis=1)[:, np.newaxis] * units - dv) / ranges[:, np.newaxis]
    return rates, g, units


def _position_partial(sat_est: OrbitState, x: PvState) -> tuple[np.ndarray, np.ndarray]:
    """(g, e): gradient of the predicted rate w.r.t. receiver position, and
    the satellite line-of-sight unit vector."""
    _, g, units = _rates_partials(sat_est.position[np.newaxis, :],
                                  sat_est.velocity[np.newaxis, :], x.as_vector())
    return g[0], units[0]


def _dd_rows(pos: np.ndarray, vel: np.ndarray, x: np.ndarray, ref: int) -> np.ndarray:
    _, g, units = _rates_partials(pos, vel, x)
    keep = np.arange(len(pos)) != ref
    return np.hstack([g[ref] - g[keep], -units[ref] + units[keep]])


def geometry_matrix(sats_est: list, x0: PvState, ref_index: int) -> np.ndarray:
    """(L-1) x 6 Jacobian of the predicted double differences.

    Row order follows ``sats_est`` with the reference satellite skipped;
    columns are position then velocity partials.
    """
    L = len(sats_est)
    if L < MIN_SATELLITES_DD:
        raise InsufficientSatellitesError(
            f"{L} satellites cannot determine 6 unknowns from {L - 1} double differences")
    pos = np.array([s.position for s in sats_est])
    vel = np.array([s.velocity for s in sats_est])
    return _dd_rows(pos, vel, x0.as_vector(), ref_index)


def snr_weight_matrix(s_base, s_ut, floor: float = 0.0) -> np.ndarray:
    """Diagonal weights from normalized base/terminal SNR differences.

    Ordered like the non-reference satellites; the degenerate equal-SNR
    case weighs every measurement alike.
    """
    s_base = np.asarray(s_base, dtype=float)
    s_ut = np.asarray(s_ut, dtype=float)
    if s_base.shape != s_ut.shape:
        raise ValueError("SNR lists must have matching lengths")
    if s_base.size < 2:
        raise ValueError("SNR weighting needs at least two satellites")
    s = s_base - s_ut
    spread = s.max() - s.min()
    if spread == 0.0:
        return np.eye(s.size)
    w = (s.max() - s) / spread
    if floor > 0.0:
        w = np.maximum(w, floor)
    return np.diag(w)


def wls_update(G: np.ndarray, W: np.ndarray, dz: np.ndarray) -> np.ndarray:
    """Normal-equations solution of the weighted linearized system."""
    normal = G.T @ W @ G
    condition = np.linalg.cond(normal)
    if not np.isfinite(condition) or condition > CONDITION_LIMIT:
        raise GeometryError(f"normal equations ill-conditioned (cond={condition:.3e})")
    return np.linalg.solve(normal, G.T @ W @ dz)


# --------------------------------------------------------------------------
# Gauss-Newton iteration on double differences
# --------------------------------------------------------------------------

def _select_reference(sats_est: list, meas: MeasurementSet, x_init: PvState,
                      cfg: SolverConfig) -> int:
    ids = [s.satellite_id for s in sats_est]
    if cfg.reference_selection == "fixed_id":
        if cfg.reference_satellite_id not in ids:
            raise ValueError(f"reference satellite {cfg.reference_satellite_id} not in view")
        return ids.index(cfg.reference_satellite_id)
    if cfg.reference_selection == "max_snr":
        ut_snr = {m.satellite_id: m.snr_db for m in meas.ut}
        return int(np.argmax([ut_snr[i] for i in ids]))
    elevations = [frames.elevation_angle(s.position, x_init.position) for s in sats_est]
    return int(np.argmax(elevations))


def _weights(meas: MeasurementSet, ids_no_ref: list, cfg: SolverConfig) -> np.ndarray:
    if cfg.weight_mode == "identity":
        return np.eye(len(ids_no_ref))
    base_snr = {m.satellite_id: m.snr_db for m in meas.base}
    ut_snr = {m.satellite_id: m.snr_db for m in meas.ut}
    return snr_weight_matrix([base_snr[i] for i in ids_no_ref],
                             [ut_snr[i] for i in ids_no_ref],
                             floor=cfg.snr_weight_floor)


def _gauss_newton(x0: np.ndarray, cfg: SolverConfig, predict, jacobian, measured,
                  W: np.ndarray):
    """Shared iteration loop. ``predict``/``jacobian`` map a state vector to
    the stacked prediction and its Jacobian."""
    x = np.array(x0, dtype=float)
    iterations = 0
    converged = False
    condition = 0.0
    previous_step = np.inf
    growth_streak = 0
    for iterations in range(1, cfg.max_iterations + 1):
        dz = measured - predict(x)
        G = jacobian(x)
        step = wls_update(G, W, dz)
        condition = np.linalg.cond(G.T @ W @ G)
        x = x + step
        step_norm = float(np.linalg.norm(step))
        if step_norm < cfg.convergence_threshold:
            converged = True
            break
        if step_norm > previous_step:
            growth_streak += 1
            if growth_streak >= _DIVERGENCE_STREAK:
                break
        else:
            growth_streak = 0
        previous_step = step_norm
    residual = measured - predict(x)
    rms = float(np.sqrt(np.mean(residual**2)))
    return x, iterations, converged, rms, condition


def iterate_position(meas: MeasurementSet, sats_est: list, base_pos: np.ndarray,
                     x_init: PvState, cfg: SolverConfig) -> EpochSolution:
    """Double-difference Gauss-Newton solve for one epoch.

    ``meas`` must already carry any rate corrections; ``sats_est`` supplies
    the estimated states for (at least) the common satellites.
    """
    states = {s.satellite_id: s for s in sats_est}
    pairs = meas.common_pairs()
    common = [states[ut.satellite_id] for ut, _ in pairs]
    if len(pairs) < MIN_SATELLITES_DD:
        raise InsufficientSatellitesError(
            f"{len(pairs)} common satellites, need {MIN_SATELLITES_DD}")
    ref = _select_reference(common, meas, x_init, cfg)
    sd = [single_difference(ut, base, states[ut.satellite_id], base_pos)
          for ut, base in pairs]
    dd = np.array([double_difference(sd[ref], sd[k])
                   for k in range(len(sd)) if k != ref])
    others = [s for k, s in enumerate(common) if k != ref]
    W = _weights(meas, [s.satellite_id for s in others], cfg)
    pos = np.array([s.position for s in common])
    vel = np.array([s.velocity for s in common])
    keep = np.arange(len(common)) != ref

    def predict(x):
        rates, _, _ = _rates_partials(pos, vel, x)
        return rates[ref] - rates[keep]

    def jacobian(x):
        return _dd_rows(pos, vel, x, ref)

    x, iterations, converged, rms, condition = _gauss_newton(
        x_init.as_vector(), cfg, predict, jacobian, dd, W)
    return EpochSolution(
        epoch=meas.epoch, state=PvState.from_vector(x), iterations=iterations,
        converged=converged, residual_rms_mps=rms, n_satellites=len(pairs),
        condition=float(condition), reference_satellite_id=common[ref].satellite_id)


# --------------------------------------------------------------------------
# Ephemeris error correction
# --------------------------------------------------------------------------

def ephemeris_error_correction(sats_est: list, base_pos: np.ndarray,
                               base_meas: list, ut_meas: list, x_ut: PvState,
                               eps_base: float = 0.0, eps_ut: float = 0.0,
                               singular_guard: float = 1e-6) -> list:
    """Estimate each satellite's along-track position error and the rate
    corrections it implies at both receivers.

    The along-track error is recovered from the base receiver's measured
    minus predicted rate (first-order range expansion with the error along
    the velocity direction); the denominator degenerates when the satellite
    moves straight along the base line of sight, and such satellites are
    flagged unusable instead of failing the epoch.
    """
    states = {s.satellite_id: s for s in sats_est}
    base_by_id = {m.satellite_id: m for m in base_meas}
    corrections = []
    for ut in ut_meas:
        sat = states.get(ut.satellite_id)
        base = base_by_id.get(ut.satellite_id)
        if sat is None or base is None:
            continue
        v_norm = float(np.linalg.norm(sat.velocity))
        rho_b = base.pseudorange_rate_mps - eps_base
        rho_ut = ut.pseudorange_rate_mps - eps_ut
        r_hat_b = float(np.linalg.norm(sat.position - base_pos))
        rho_hat_b = range_rate(sat.position, sat.velocity, base_pos, np.zeros(3))
        r_hat_ut = float(np.linalg.norm(sat.position - x_ut.position))
        rho_hat_ut = predicted_rate(sat, x_ut)
        denominator = rho_b**2 - v_norm**2
        if abs(denominator) < singular_guard * v_norm**2:
            corrections.append(SatelliteCorrection(
                ut.satellite_id, 0.0, 0.0, 0.0, usable=False,
                reason="line-of-sight aligned with satellite velocity"))
            continue
        delta_sat = r_hat_b * v_norm * (rho_hat_b - rho_b) / denominator
        r_b = r_hat_b + delta_sat * rho_b / v_norm
        r_ut = r_hat_ut + delta_sat * rho_ut / v_norm
        if r_b <= 0.0 or r_ut <= 0.0:
            corrections.append(SatelliteCorrection(
                ut.satellite_id, 0.0, 0.0, delta_sat, usable=False,
                reason="corrected range not positive"))
            continue
        v_rel_ut = float(np.linalg.norm(sat.velocity - x_ut.velocity))
        d_rate_ut = rho_hat_ut * (r_hat_ut / r_ut - 1.0) + v_rel_ut * delta_sat / r_ut
        d_rate_base = rho_hat_b * (r_hat_b / r_b - 1.0) + v_norm * delta_sat / r_b
        corrections.append(SatelliteCorrection(
            ut.satellite_id, d_rate_ut, d_rate_base, delta_sat, usable=True))
    return corrections


def apply_corrections(meas: MeasurementSet, corrections: list) -> MeasurementSet:
    """Subtract the per-satellite rate corrections from both receivers.

    Unusable satellites are dropped from both receivers for this epoch.
    """
    by_id = {c.satellite_id: c for c in corrections}

    def fix(group, attr):
        out = []
        for m in group:
            c = by_id.get(m.satellite_id)
            if c is None:
                out.append(m)
            elif c.usable:
                out.append(m.with_rate_offset(-getattr(c, attr)))
        return out

    return MeasurementSet(meas.epoch,
                          fix(meas.base, "rate_correction_base_mps"),
                          fix(meas.ut, "rate_correction_ut_mps"))


# --------------------------------------------------------------------------
# Full solution methods
# --------------------------------------------------------------------------

def solve_3dpose(meas: MeasurementSet, sats_est: list, base_pos: np.ndarray,
                 cfg: SolverConfig) -> EpochSolution:
    """Double-difference solve with the ephemeris error correction stage.

    Stage 1 solves the uncorrected double differences from the base
    position; each outer pass then re-estimates the per-satellite
    corrections at the current terminal estimate and re-solves.
    With ``correction_enabled`` false the stage-1 (vanilla) solution is
    returned unchanged.
    """
    x_init = PvState(np.array(base_pos, dtype=float), np.zeros(3))
    solution = iterate_position(meas, sats_est, base_pos, x_init, cfg)
    if not cfg.correction_enabled:
        return solution
    dropped: list = []
    magnitudes: dict = {}
    for _ in range(cfg.outer_correction_passes):
        pairs = meas.common_pairs()
        corrections = ephemeris_error_correction(
            sats_est, base_pos, [b for _, b in pairs], [u for u, _ in pairs],
            solution.state)
        corrected = apply_corrections(meas, corrections)
        magnitudes = {c.satellite_id: abs(c.sat_position_error_m)
                      for c in corrections if c.usable}
        dropped = sorted(set(dropped) | {c.satellite_id for c in corrections
                                         if not c.usable})
        solution = iterate_position(corrected, sats_est, base_pos, solution.state, cfg)
    solution.correction_magnitudes_m = magnitudes
    solution.dropped_satellites = dropped
    return solution


def solve_vanilla_dd(meas: MeasurementSet, sats_est: list, base_pos: np.ndarray,
                     cfg: SolverConfig) -> EpochSolution:
    """Double-difference solve without the correction stage."""
    return solve_3dpose(meas, sats_est, base_pos,
                        replace(cfg, correction_enabled=False))


def solve_differential(meas: MeasurementSet, sats_est: list, base_pos: np.ndarray,
                       cfg: SolverConfig) -> EpochSolution:
    """Single-difference baseline method with a lumped clock-rate unknown.

    Seven unknowns (position, velocity, relative receiver clock rate in
    m/s) over the L single differences; the base-side ephemeris handling is
    inherent in the differencing, which is exactly why the method degrades
    as the baseline grows.
    """
    states = {s.satellite_id: s for s in sats_est}
    pairs = meas.common_pairs()
    if len(pairs) < MIN_SATELLITES_DIFFERENTIAL:
        raise InsufficientSatellitesError(
            f"{len(pairs)} common satellites, need {MIN_SATELLITES_DIFFERENTIAL}")
    common = [states[ut.satellite_id] for ut, _ in pairs]
    sd = np.array([single_difference(ut, base, states[ut.satellite_id], base_pos)
                   for ut, base in pairs])
    W = np.eye(len(pairs))
    pos = np.array([s.position for s in common])
    vel = np.array([s.velocity for s in common])

    def predict(x):
        rates, _, _ = _rates_partials(pos, vel, x)
        return rates + x[6]

    def jacobian(x):
        _, g, units = _rates_partials(pos, vel, x)
        return np.hstack([g, -units, np.ones((len(common), 1))])

    x0 = np.concatenate([np.array(base_pos, dtype=float), np.zeros(4)])
    x, iterations, converged, rms, condition = _gauss_newton(
        x0, cfg, predict, jacobian, sd, W)
    return EpochSolution(
        epoch=meas.epoch, state=PvState.from_vector(x[:6]), iterations=iterations,
        converged=converged, residual_rms_mps=rms, n_satellites=len(pairs),
        condition=float(condition), clock_rate_mps=float(x[6]))


METHODS = {
    "differential": solve_differential,
    "vanilla_dd": solve_vanilla_dd,
    "3dpose_ls": solve_3dpose,
    "3dpose_wls": solve_3dpose,
}


def method_config(method: str, cfg: SolverConfig) -> SolverConfig:
    """Per-method weight/correction settings layered over a scenario config."""
    if method == "differential":
        return replace(cfg, correction_enabled=False, weight_mode="identity")
    if method == "vanilla_dd":
        return replace(cfg, correction_enabled=False, weight_mode="snr")
    if method == "3dpose_ls":
        return replace(cfg, correction_enabled=True, weight_mode="identity")
    if method == "3dpose_wls":
        return replace(cfg, correction_enabled=True, weight_mode="snr")
    raise ValueError(f"unknown method {method!r}")


def solve_epoch(method: str, meas: MeasurementSet, sats_est: list,
                base_pos: np.ndarray, cfg: SolverConfig) -> EpochSolution:
    return METHODS[method](meas, sats_est, base_pos, method_config(method, cfg))
