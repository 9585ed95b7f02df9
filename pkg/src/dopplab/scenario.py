"""Declarative experiment definition, epoch loop, and metric computation.

A scenario file is YAML (key/value with nesting, strict unknown-key
rejection). The epoch loop propagates the constellation, injects ephemeris
errors, synthesizes both receivers' measurements (with residual atmosphere
and clock terms), runs every requested method, and accumulates errors in
the local north/east/up frame at the true terminal position.
"""

from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from . import atmosphere, frames, measurements, orbits, solver
from .atmosphere import AtmosphereParams
from .constants import DEFAULT_TRANSMIT_FREQ_HZ
from .frames import EnuVector, GeodeticCoord
from .measurements import ClockModel, ClockSet, MeasurementSet
from .orbits import ElementSet, EphemerisErrorSpec
from .solver import InsufficientSatellitesError, PvState, SolverConfig

KNOWN_METHODS = ("differential", "vanilla_dd", "3dpose_ls", "3dpose_wls")


class ScenarioError(ValueError):
    """Configuration file failed to parse or validate."""


def default_truth_atmosphere() -> AtmosphereParams:
    """Solver-side defaults with a 5% mismatch on pressure, water vapor,
    and ionosphere amplitude, so residual delay-rate errors are nonzero."""
    nominal = AtmosphereParams()
    return AtmosphereParams(
        pressure_hpa=nominal.pressure_hpa * 1.05,
        temperature_k=nominal.temperature_k,
        water_vapor_hpa=nominal.water_vapor_hpa * 1.05,
        alpha=tuple(a * 1.05 for a in nominal.alpha),
        beta=nominal.beta)


@dataclass(frozen=True)
class ClockSpec:
    drift_s_per_s: float = 0.0
    frequency_drift_s_per_s2: float = 0.0
    drift_noise_std: float = 0.0


@dataclass(frozen=True)
class ClockConfig:
    base: ClockSpec = field(default_factory=ClockSpec)
    ut: ClockSpec = field(default_factory=ClockSpec)
    satellite_drift_range_s_per_s: tuple = (-1e-8, 1e-8)
    satellite_frequency_drift_range_s_per_s2: tuple = (-1e-12, 1e-12)
    satellite_drift_noise_std: float = 0.0


@dataclass(frozen=True)
class AtmosphereConfig:
    enabled: bool = True
    truth: AtmosphereParams = field(default_factory=default_truth_atmosphere)
    solver: AtmosphereParams = field(default_factory=AtmosphereParams)


@dataclass(frozen=True)
class TrajectorySpec:
    waypoints: tuple            # of GeodeticCoord
    speed_mps: float

    def __post_init__(self):
        if len(self.waypoints) < 2:
            raise ScenarioError("trajectory needs at least two waypoints")
        if self.speed_mps <= 0:
            raise ScenarioError("trajectory speed must be positive")


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    seed: int
    tle_path: Path
    base: GeodeticCoord
    trajectory: TrajectorySpec
    start_time: Optional[datetime] = None
    epoch_rate_hz: float = 1.0
    duration_s: Optional[float] = None
    elevation_mask_deg: float = 15.0
    f_t_hz: float = DEFAULT_TRANSMIT_FREQ_HZ
    noise_std_hz: float = 0.1
    snr_jitter_db: float = 0.2
    snr_satellite_jitter_db: float = 0.8
    ephemeris_error: EphemerisErrorSpec = field(default_factory=EphemerisErrorSpec)
    clocks: ClockConfig = field(default_factory=ClockConfig)
    atmosphere: AtmosphereConfig = field(default_factory=AtmosphereConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    methods: tuple = KNOWN_METHODS

    def __post_init__(self):
        if self.duration_s is not None and self.duration_s <= 0:
            raise ScenarioError("duration_s must be positive")
        if self.epoch_rate_hz <= 0:
            raise ScenarioError("epoch_rate_hz must be positive")
        if not 0.0 <= self.elevation_mask_deg < 90.0:
            raise ScenarioError("elevation_mask_deg must lie in [0, 90)")
        if self.noise_std_hz < 0:
            raise ScenarioError("noise_std_hz must be non-negative")
        if not self.methods:
            raise ScenarioError("methods must not be empty")
        for m in self.methods:
            if m not in KNOWN_METHODS:
                raise ScenarioError(f"unknown method {m!r}; choose from {KNOWN_METHODS}")


# --------------------------------------------------------------------------
# Config loading
# --------------------------------------------------------------------------

def _require(mapping: dict, key: str, where: str):
    if key not in mapping:
        raise ScenarioError(f"{where}: missing required key '{key}'")
    return mapping[key]


def _check_keys(mapping: dict, allowed: set, where: str) -> None:
    if not isinstance(mapping, dict):
        raise ScenarioError(f"{where}: expected a mapping")
    unknown = set(mapping) - allowed
    if unknown:
        raise ScenarioError(f"{where}: unknown key(s) {sorted(unknown)}; allowed: {sorted(allowed)}")


def _parse_time(value, where: str) -> datetime:
    try:
        return datetime.fromisoformat(str(value).replace("Z", ""))
    except ValueError:
        raise ScenarioError(f"{where}: cannot parse timestamp {value!r}") from None


def _geodetic(node: dict, where: str) -> GeodeticCoord:
    _check_keys(node, {"latitude_deg", "longitude_deg", "height_m"}, where)
    try:
        return GeodeticCoord(float(_require(node, "latitude_deg", where)),
                             float(_require(node, "longitude_deg", where)),
                             float(node.get("height_m", 0.0)))
    except ValueError as exc:
        raise ScenarioError(f"{where}: {exc}") from None


def _clock_spec(node: dict, where: str) -> ClockSpec:
    _check_keys(node, {"drift_s_per_s", "frequency_drift_s_per_s2", "drift_noise_std"}, where)
    return ClockSpec(float(node.get("drift_s_per_s", 0.0)),
                     float(node.get("frequency_drift_s_per_s2", 0.0)),
                     float(node.get("drift_noise_std", 0.0)))


def _atmo_params(node: dict, where: str) -> AtmosphereParams:
    _check_keys(node, {"pressure_hpa", "temperature_k", "water_vapor_hpa",
                       "alpha", "beta"}, where)
    nominal = AtmosphereParams()
    return AtmosphereParams(
        pressure_hpa=float(node.get("pressure_hpa", nominal.pressure_hpa)),
        temperature_k=float(node.get("temperature_k", nominal.temperature_k)),
        water_vapor_hpa=float(node.get("water_vapor_hpa", nominal.water_vapor_hpa)),
        alpha=tuple(float(v) for v in node.get("alpha", nominal.alpha)),
        beta=tuple(float(v) for v in node.get("beta", nominal.beta)))


def parse_scenario(raw: dict, base_dir: Path, name_hint: str = "scenario") -> ScenarioConfig:
    top_keys = {"name", "seed", "tle_path", "base", "trajectory", "start_time",
                "epoch_rate_hz", "duration_s", "elevation_mask_deg", "f_t_hz",
                "noise_std_hz", "snr_jitter_db", "snr_satellite_jitter_db",
                "ephemeris_error", "clocks", "atmosphere", "solver", "methods"}
    _check_keys(raw, top_keys, "scenario")

    tle_path = Path(str(_require(raw, "tle_path", "scenario")))
    if not tle_path.is_absolute():
        tle_path = base_dir / tle_path

    traj_node = _require(raw, "trajectory", "scenario")
    _check_keys(traj_node, {"waypoints", "speed_mps"}, "trajectory")
    waypoints = []
    for k, wp in enumerate(_require(traj_node, "waypoints", "trajectory")):
        if not isinstance(wp, (list, tuple)) or len(wp) not in (2, 3):
            raise ScenarioError(f"trajectory.waypoints[{k}]: expected [lat, lon] or [lat, lon, height]")
        height = float(wp[2]) if len(wp) == 3 else 0.0
        try:
            waypoints.append(GeodeticCoord(float(wp[0]), float(wp[1]), height))
        except ValueError as exc:
            raise ScenarioError(f"trajectory.waypoints[{k}]: {exc}") from None

    eph_node = raw.get("ephemeris_error", {})
    _check_keys(eph_node, {"position_tangential_m", "position_radial_m",
                           "velocity_radial_mps", "velocity_tangential_mps",
                           "randomize_sign", "per_satellite_jitter",
                           "orbit_consistent_velocity"}, "ephemeris_error")
    try:
        eph = EphemerisErrorSpec(
            position_tangential_m=float(eph_node.get("position_tangential_m", 0.0)),
            position_radial_m=float(eph_node.get("position_radial_m", 0.0)),
            velocity_radial_mps=float(eph_node.get("velocity_radial_mps", 0.0)),
            velocity_tangential_mps=float(eph_node.get("velocity_tangential_mps", 0.0)),
            randomize_sign=bool(eph_node.get("randomize_sign", True)),
            per_satellite_jitter=float(eph_node.get("per_satellite_jitter", 0.0)),
            orbit_consistent_velocity=bool(eph_node.get("orbit_consistent_velocity", False)))
    except ValueError as exc:
        raise ScenarioError(f"ephemeris_error: {exc}") from None

    clocks_node = raw.get("clocks", {})
    _check_keys(clocks_node, {"base", "ut", "satellite_drift_range_s_per_s",
                              "satellite_frequency_drift_range_s_per_s2",
                              "satellite_drift_noise_std"}, "clocks")
    clocks = ClockConfig(
        base=_clock_spec(clocks_node.get("base", {}), "clocks.base"),
        ut=_clock_spec(clocks_node.get("ut", {}), "clocks.ut"),
        satellite_drift_range_s_per_s=tuple(
            float(v) for v in clocks_node.get("satellite_drift_range_s_per_s", (-1e-8, 1e-8))),
        satellite_frequency_drift_range_s_per_s2=tuple(
            float(v) for v in clocks_node.get("satellite_frequency_drift_range_s_per_s2",
                                              (-1e-12, 1e-12))),
        satellite_drift_noise_std=float(clocks_node.get("satellite_drift_noise_std", 0.0)))

    atmo_node = raw.get("atmosphere", {})
    _check_keys(atmo_node, {"enabled", "truth", "solver"}, "atmosphere")
    atmo = AtmosphereConfig(
        enabled=bool(atmo_node.get("enabled", True)),
        truth=(_atmo_params(atmo_node["truth"], "atmosphere.truth")
               if "truth" in atmo_node else default_truth_atmosphere()),
        solver=(_atmo_params(atmo_node["solver"], "atmosphere.solver")
                if "solver" in atmo_node else AtmosphereParams()))

    solver_node = raw.get("solver", {})
    _check_keys(solver_node, {"convergence_threshold", "max_iterations",
                              "outer_correction_passes", "reference_selection",
                              "reference_satellite_id", "snr_weight_floor"}, "solver")
    try:
        solver_cfg = SolverConfig(
            convergence_threshold=float(solver_node.get("convergence_threshold", 1e-4)),
            max_iterations=int(solver_node.get("max_iterations", 50)),
            outer_correction_passes=int(solver_node.get("outer_correction_passes", 1)),
            reference_selection=str(solver_node.get("reference_selection", "highest_elevation")),
            reference_satellite_id=solver_node.get("reference_satellite_id"),
            snr_weight_floor=float(solver_node.get("snr_weight_floor", 0.0)))
    except ValueError as exc:
        raise ScenarioError(f"solver: {exc}") from None

    try:
        return ScenarioConfig(
            name=str(raw.get("name", name_hint)),
            seed=int(raw.get("seed", 0)),
            tle_path=tle_path,
            base=_geodetic(_require(raw, "base", "scenario"), "base"),
            trajectory=TrajectorySpec(tuple(waypoints),
                                      float(_require(traj_node, "speed_mps", "trajectory"))),
            start_time=(_parse_time(raw["start_time"], "start_time")
                        if "start_time" in raw else None),
            epoch_rate_hz=float(raw.get("epoch_rate_hz", 1.0)),
            duration_s=(float(raw["duration_s"]) if "duration_s" in raw else None),
            elevation_mask_deg=float(raw.get("elevation_mask_deg", 15.0)),
            f_t_hz=float(raw.get("f_t_hz", DEFAULT_TRANSMIT_FREQ_HZ)),
            noise_std_hz=float(raw.get("noise_std_hz", 0.1)),
            snr_jitter_db=float(raw.get("snr_jitter_db", 0.2)),
            snr_satellite_jitter_db=float(raw.get("snr_satellite_jitter_db", 0.8)),
            ephemeris_error=eph,
            clocks=clocks,
            atmosphere=atmo,
            solver=solver_cfg,
            methods=tuple(raw.get("methods", KNOWN_METHODS)))
    except ValueError as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError(str(exc)) from None


def load_scenario(path) -> ScenarioConfig:
    """Read and validate a scenario YAML file."""
    path = Path(path)
    if not path.exists():
        raise ScenarioError(f"scenario file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ScenarioError(f"{path}: YAML parse error: {exc}") from None
    if not isinstance(raw, dict):
        raise ScenarioError(f"{path}: top level must be a mapping")
    return parse_scenario(raw, path.parent, name_hint=path.stem)


# --------------------------------------------------------------------------
# Trajectory
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TrajectorySample:
    time_s: float
    position: np.ndarray
    velocity: np.ndarray


def build_trajectory(spec: TrajectorySpec, epoch_rate_hz: float,
                     duration_s: Optional[float] = None) -> list:
    """Constant-speed piecewise-linear path sampled at the epoch rate.

    Interpolation runs in geodetic space (the path hugs the ellipsoid);
    velocities use the ECEF chord direction of the active segment, which
    stays within a few mm/s of the position finite differences for
    kilometer-scale segments.
    """
    points = [np.array([w.latitude, w.longitude, w.height]) for w in spec.waypoints]
    ecef_points = [frames.geodetic_to_ecef(w) for w in spec.waypoints]
    seg_lengths = [float(np.linalg.norm(b - a)) for a, b in zip(ecef_points, ecef_points[1:])]
    total = sum(seg_lengths)
    if total <= 0.0:
        raise ScenarioError("trajectory has zero length (coincident waypoints)")
    path_duration = total / spec.speed_mps
    duration = path_duration if duration_s is None else min(duration_s, path_duration)

    directions = [(b - a) / L for a, b, L in zip(ecef_points, ecef_points[1:], seg_lengths)]
    cumulative = np.concatenate([[0.0], np.cumsum(seg_lengths)])
    samples = []
    n_samples = int(np.floor(duration * epoch_rate_hz + 1e-9)) + 1
    for k in range(n_samples):
        t = k / epoch_rate_hz
        s = min(spec.speed_mps * t, total)
        seg = min(int(np.searchsorted(cumulative, s, side="right")) - 1, len(seg_lengths) - 1)
        frac = (s - cumulative[seg]) / seg_lengths[seg]
        geo = points[seg] + frac * (points[seg + 1] - points[seg])
        pos = frames.geodetic_to_ecef(GeodeticCoord(*geo))
        samples.append(TrajectorySample(t, pos, spec.speed_mps * directions[seg]))
    return samples


def trajectory_length_m(spec: TrajectorySpec) -> float:
    ecef_points = [frames.geodetic_to_ecef(w) for w in spec.waypoints]
    return float(sum(np.linalg.norm(b - a) for a, b in zip(ecef_points, ecef_points[1:])))


# --------------------------------------------------------------------------
# Metrics
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class RmseSummary:
    north_m: float
    east_m: float
    up_m: float
    threed_m: float
    epoch_count: int
    convergence_rate: float


def rmse_neu(errors: list) -> RmseSummary:
    """Component-wise RMS of ENU errors plus the 3-D RMS."""
    if not errors:
        raise ValueError("cannot compute RMSE over an empty error list")
    arr = np.array([[e.north, e.east, e.up] for e in errors])
    comp = np.sqrt(np.mean(arr**2, axis=0))
    threed = float(np.sqrt(np.mean(np.sum(arr**2, axis=1))))
    return RmseSummary(float(comp[0]), float(comp[1]), float(comp[2]), threed,
                       len(errors), 1.0)


# --------------------------------------------------------------------------
# Epoch loop
# --------------------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: datetime
    method: str
    estimate: Optional[PvState]
    error_neu: Optional[EnuVector]
    error_3d: float
    iterations: int
    converged: bool
    n_satellites: int


@dataclass
class ScenarioResult:
    config: ScenarioConfig
    records: list                     # EpochRecord, epoch-major then method
    rmse: dict                        # method -> RmseSummary
    truth: dict                       # epoch -> (position, velocity)
    measurement_sets: list            # MeasurementSet per epoch
    baselines_m: list
    warnings: list


def _build_clocks(cfg: ScenarioConfig, sat_ids: list, t0: datetime) -> ClockSet:
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed & 0x7FFFFFFF, 0xC10C]))
    sat_clocks = {}
    lo_d, hi_d = cfg.clocks.satellite_drift_range_s_per_s
    lo_f, hi_f = cfg.clocks.satellite_frequency_drift_range_s_per_s2
    for sid in sorted(sat_ids):
        sat_clocks[sid] = ClockModel(
            t0,
            drift_s_per_s=float(rng.uniform(lo_d, hi_d)),
            frequency_drift_s_per_s2=float(rng.uniform(lo_f, hi_f)),
            drift_noise_std=cfg.clocks.satellite_drift_noise_std)
    mk = lambda s: ClockModel(t0, drift_s_per_s=s.drift_s_per_s,
                              frequency_drift_s_per_s2=s.frequency_drift_s_per_s2,
                              drift_noise_std=s.drift_noise_std)
    return ClockSet(mk(cfg.clocks.base), mk(cfg.clocks.ut), sat_clocks)


def _atmosphere_residual_fn(cfg: ScenarioConfig, elements: ElementSet, t: datetime):
    """Residual delay-rate provider for one epoch (truth minus solver model)."""
    if not cfg.atmosphere.enabled:
        return None
    dt = 0.1
    pos_m, _ = elements.states_ecef(t - timedelta(seconds=dt))
    pos_p, _ = elements.states_ecef(t + timedelta(seconds=dt))
    index = {int(sid): k for k, sid in enumerate(elements.ids)}
    calculators: dict = {}

    def residual(sat: orbits.OrbitState, rx_pos: np.ndarray) -> float:
        key = rx_pos.tobytes()
        calc = calculators.get(key)
        if calc is None:
            calc = calculators[key] = atmosphere.SlantDelayCalculator(rx_pos)
        k = index[sat.satellite_id]
        positions = {-dt: pos_m[k], dt: pos_p[k]}

        def total(params):
            def delay(offset):
                return calc.delay(params, positions[offset],
                                  t + timedelta(seconds=offset))
            return atmosphere.delay_rate(delay, 0.0, dt)

        return total(cfg.atmosphere.truth) - total(cfg.atmosphere.solver)

    return residual


def run_scenario(cfg: ScenarioConfig) -> ScenarioResult:
    """Execute the full epoch loop for every requested method."""
    tles = orbits.load_tle_file(cfg.tle_path)
    elements = ElementSet(tles)
    start = cfg.start_time or tles[0].epoch
    base_pos = frames.geodetic_to_ecef(cfg.base)
    samples = build_trajectory(cfg.trajectory, cfg.epoch_rate_hz, cfg.duration_s)
    clocks = _build_clocks(cfg, [r.catalog_number for r in tles], start)

    records: list = []
    truth: dict = {}
    msets: list = []
    baselines: list = []
    errors: dict = {m: [] for m in cfg.methods}
    converged_counts: dict = {m: 0 for m in cfg.methods}
    solved_counts: dict = {m: 0 for m in cfg.methods}
    gap_epochs = 0

    for k, sample in enumerate(samples):
        t = start + timedelta(seconds=sample.time_s)
        true_states = orbits.propagate_all(elements, t)
        est_states = [orbits.inject_ephemeris_error(s, cfg.ephemeris_error, cfg.seed)
                      for s in true_states]
        mset = measurements.build_measurement_set(
            true_states, base_pos, sample.position, sample.velocity, clocks,
            t, k, cfg.seed, mask_deg=cfg.elevation_mask_deg,
            noise_std_hz=cfg.noise_std_hz, f_t_hz=cfg.f_t_hz,
            atmosphere_residual=_atmosphere_residual_fn(cfg, elements, t),
            snr_jitter_db=cfg.snr_jitter_db)
        truth[t] = (sample.position, sample.velocity)
        msets.append(mset)
        baselines.append(float(np.linalg.norm(sample.position - base_pos)))
        n_common = len(mset.common_satellite_ids)
        if n_common < solver.MIN_SATELLITES_DD:
            gap_epochs += 1

        true_geo = frames.ecef_to_geodetic(sample.position)
        for method in cfg.methods:
            try:
                sol = solver.solve_epoch(method, mset, est_states, base_pos, cfg.solver)
            except (InsufficientSatellitesError, solver.GeometryError):
                records.append(EpochRecord(t, method, None, None, float("nan"),
                                           0, False, n_common))
                continue
            err = frames.ecef_to_enu(sol.state.position, true_geo)
            records.append(EpochRecord(t, method, sol.state, err, err.norm(),
                                       sol.iterations, sol.converged, n_common))
            errors[method].append(err)
            solved_counts[method] += 1
            converged_counts[method] += int(sol.converged)

    warnings = []
    if gap_epochs > 0.1 * len(samples):
        warnings.append(f"{gap_epochs}/{len(samples)} epochs below "
                        f"{solver.MIN_SATELLITES_DD} common satellites")

    rmse = {}
    for method in cfg.methods:
        if errors[method]:
            summary = rmse_neu(errors[method])
            rate = converged_counts[method] / solved_counts[method]
            rmse[method] = RmseSummary(summary.north_m, summary.east_m, summary.up_m,
                                       summary.threed_m, summary.epoch_count, rate)
    return ScenarioResult(cfg, records, rmse, truth, msets, baselines, warnings)
