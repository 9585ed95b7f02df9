"""TLE ingestion, satellite state propagation, and ephemeris error injection.

Propagation is two-body Keplerian from the TLE mean elements, rotated into
ECEF with the Greenwich sidereal angle. Perturbation fidelity is deliberately
out of scope: estimated ephemerides are produced by injecting controlled
RTN-frame errors onto the propagated truth, which dominates any force-model
difference by orders of magnitude. A higher-fidelity propagator can be
swapped in behind the same ``propagate``/``propagate_all`` call signatures.
"""

from dataclasses import dataclass
from datetime import datetime, timedelta
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import _kernels, frames
from .constants import EARTH_MU, EARTH_OMEGA, SECONDS_PER_DAY

_J2000 = datetime(2000, 1, 1, 12, 0, 0)


class TleParseError(ValueError):
    """Raised when a TLE line fails layout, numeric, or checksum validation."""


class PropagationError(ValueError):
    """Raised for stale epochs or non-elliptical elements."""


@dataclass(frozen=True)
class TleRecord:
    name: str
    catalog_number: int
    epoch: datetime
    inclination_deg: float
    raan_deg: float
    eccentricity: float
    argument_of_perigee_deg: float
    mean_anomaly_deg: float
    mean_motion_rev_day: float

    def __post_init__(self):
        if not 0.0 <= self.eccentricity < 1.0:
            raise ValueError(f"eccentricity {self.eccentricity} outside [0, 1)")
        if not 0.0 <= self.inclination_deg <= 180.0:
            raise ValueError(f"inclination {self.inclination_deg} outside [0, 180]")
        if self.mean_motion_rev_day <= 0.0:
            raise ValueError("mean motion must be positive")

    @property
    def mean_motion_rad_s(self) -> float:
        return self.mean_motion_rev_day * 2.0 * np.pi / SECONDS_PER_DAY

    @property
    def semi_major_axis_m(self) -> float:
        return float((EARTH_MU / self.mean_motion_rad_s**2) ** (1.0 / 3.0))

    @property
    def period_s(self) -> float:
        return SECONDS_PER_DAY / self.mean_motion_rev_day


@dataclass(frozen=True)
class OrbitState:
    """Satellite position/velocity in ECEF at an epoch.

    flavor 'true' states come straight from the propagator; 'estimated'
    states carry injected ephemeris errors.
    """

    satellite_id: int
    epoch: datetime
    position: np.ndarray
    velocity: np.ndarray
    flavor: str = "true"


@dataclass(frozen=True)
class EphemerisErrorSpec:
    """RTN-frame offsets applied to true states to fake TLE/propagator error.

    With ``orbit_consistent_velocity`` the dominant along-track offset d is
    treated as a time shift along the orbit, so it brings its own radial
    velocity partner of magnitude (mu/r^2) * d / v (about 2.9 m/s for 3 km
    at 550 km altitude) on top of the independently drawn velocity fields.
    TLE errors really do grow this way, and the rate discrepancies of a
    time-shifted orbit scale like the range acceleration, which is the
    structure the correction stage inverts.
    """

    position_tangential_m: float = 0.0
    position_radial_m: float = 0.0
    velocity_radial_mps: float = 0.0
    velocity_tangential_mps: float = 0.0
    randomize_sign: bool = True
    per_satellite_jitter: float = 0.0
    orbit_consistent_velocity: bool = False

    def __post_init__(self):
        for mag in (self.position_tangential_m, self.position_radial_m,
                    self.velocity_radial_mps, self.velocity_tangential_mps):
            if mag < 0:
                raise ValueError("error magnitudes must be non-negative")
        if not 0.0 <= self.per_satellite_jitter <= 0.5:
            raise ValueError("per-satellite jitter must lie in [0, 0.5]")

    def is_zero(self) -> bool:
        return (self.position_tangential_m == 0.0 and self.position_radial_m == 0.0
                and self.velocity_radial_mps == 0.0 and self.velocity_tangential_mps == 0.0)


# --------------------------------------------------------------------------
# TLE parsing / emission
# --------------------------------------------------------------------------

def tle_checksum(line: str) -> int:
    """Mod-10 checksum over the first 68 columns; '-' counts as 1."""
    total = 0
    for ch in line[:68]:
        if ch.isdigit():
            total += int(ch)
        elif ch == "-":
            total += 1
    return total % 10


def _field(line: str, line_no: int, start: int, end: int, kind, what: str):
    """Parse columns [start, end] (1-based, inclusive) of a TLE line."""
    raw = line[start - 1:end]
    try:
        return kind(raw)
    except ValueError:
        raise TleParseError(
            f"line {line_no}, columns {start}-{end}: cannot parse {what} from {raw!r}") from None


def _check_line(line: str, line_no: int) -> None:
    if len(line) != 69:
        raise TleParseError(f"line {line_no}: length {len(line)}, TLE lines must be 69 characters")
    if line[0] != str(line_no):
        raise TleParseError(f"line {line_no}: expected line number {line_no}, found {line[0]!r}")
    want = int(line[68]) if line[68].isdigit() else -1
    got = tle_checksum(line)
    if want != got:
        raise TleParseError(f"line {line_no}: checksum {line[68]!r} does not match computed {got}")


def _epoch_from_fields(year_2digit: int, day_of_year: float) -> datetime:
    year = year_2digit + (2000 if year_2digit < 57 else 1900)
    return datetime(year, 1, 1) + timedelta(days=day_of_year - 1.0)


def parse_tle(name_line: str, line1: str, line2: str) -> TleRecord:
    """Decode one 3-line TLE group; both data lines must pass the checksum."""
    _check_line(line1, 1)
    _check_line(line2, 2)
    catalog = _field(line1, 1, 3, 7, int, "catalog number")
    catalog2 = _field(line2, 2, 3, 7, int, "catalog number")
    if catalog != catalog2:
        raise TleParseError(f"catalog number mismatch between lines: {catalog} vs {catalog2}")
    epoch_year = _field(line1, 1, 19, 20, int, "epoch year")
    epoch_day = _field(line1, 1, 21, 32, float, "epoch day")
    inclination = _field(line2, 2, 9, 16, float, "inclination")
    raan = _field(line2, 2, 18, 25, float, "RAAN")
    ecc_digits = _field(line2, 2, 27, 33, lambda s: int(s), "eccentricity")
    argp = _field(line2, 2, 35, 42, float, "argument of perigee")
    mean_anomaly = _field(line2, 2, 44, 51, float, "mean anomaly")
    mean_motion = _field(line2, 2, 53, 63, float, "mean motion")
    return TleRecord(
        name=name_line.strip(),
        catalog_number=catalog,
        epoch=_epoch_from_fields(epoch_year, epoch_day),
        inclination_deg=inclination,
        raan_deg=raan,
        eccentricity=ecc_digits * 1e-7,
        argument_of_perigee_deg=argp,
        mean_anomaly_deg=mean_anomaly,
        mean_motion_rev_day=mean_motion,
    )


def emit_tle(record: TleRecord) -> tuple[str, str, str]:
    """Format a record back into a 3-line TLE group (round-trips parse_tle)."""
    epoch_year = record.epoch.year % 100
    start = datetime(record.epoch.year, 1, 1)
    day = (record.epoch - start).total_seconds() / SECONDS_PER_DAY + 1.0
    line1 = (f"1 {record.catalog_number:05d}U 20001A   "
             f"{epoch_year:02d}{day:012.8f}  .00000000  00000-0  00000-0 0  999")
    line2 = (f"2 {record.catalog_number:05d} {record.inclination_deg:8.4f} "
             f"{record.raan_deg:8.4f} {round(record.eccentricity * 1e7):07d} "
             f"{record.argument_of_perigee_deg:8.4f} {record.mean_anomaly_deg:8.4f} "
             f"{record.mean_motion_rev_day:11.8f}    1")
    line1 += str(tle_checksum(line1))
    line2 += str(tle_checksum(line2))
    return record.name, line1, line2


def load_tle_file(path) -> list[TleRecord]:
    """Load 3-line TLE groups from a file, or every ``*.tle`` in a directory."""
    path = Path(path)
    if path.is_dir():
        records = []
        for child in sorted(path.glob("*.tle")):
            records.extend(load_tle_file(child))
        return records
    lines = [ln.rstrip("\n") for ln in path.read_text().splitlines() if ln.strip()]
    records = []
    i = 0
    while i < len(lines):
        if lines[i].startswith("1 ") and len(lines[i]) == 69:
            name = f"SAT-{len(records)}"
            group = ("", lines[i], lines[i + 1]) if i + 1 < len(lines) else None
            step = 2
        else:
            if i + 2 >= len(lines):
                raise TleParseError(f"{path}: truncated TLE group starting at line {i + 1}")
            name = lines[i]
            group = (name, lines[i + 1], lines[i + 2])
            step = 3
        if group is None:
            raise TleParseError(f"{path}: truncated TLE group starting at line {i + 1}")
        records.append(parse_tle(*group))
        i += step
    return records


# --------------------------------------------------------------------------
# Two-body propagation
# --------------------------------------------------------------------------

def gmst_rad(t: datetime) -> float:
    """Greenwich mean sidereal angle, radians."""
    days = (t - _J2000).total_seconds() / SECONDS_PER_DAY
    theta_deg = (280.46061837 + 360.98564736629 * days) % 360.0
    return float(np.radians(theta_deg))


class ElementSet:
    """Vectorized element arrays for a constellation, for fast epoch loops."""

    def __init__(self, records: list[TleRecord]):
        if not records:
            raise ValueError("element set needs at least one record")
        self.records = list(records)
        self.ids = np.array([r.catalog_number for r in records], dtype=np.int64)
        self.epochs = list(r.epoch for r in records)
        self.n_rad = np.array([r.mean_motion_rad_s for r in records])
        self.ecc = np.array([r.eccentricity for r in records])
        self.sma = np.array([r.semi_major_axis_m for r in records])
        self.inc = np.radians([r.inclination_deg for r in records])
        self.raan = np.radians([r.raan_deg for r in records])
        self.argp = np.radians([r.argument_of_perigee_deg for r in records])
        self.m0 = np.radians([r.mean_anomaly_deg for r in records])
        ref = self.epochs[0]
        self.epoch_offsets = np.array([(e - ref).total_seconds() for e in self.epochs])
        self.ref_epoch = ref

    def states_eci(self, t: datetime) -> tuple[np.ndarray, np.ndarray]:
        """Inertial positions/velocities (N, 3) for every satellite at ``t``."""
        dt = (t - self.ref_epoch).total_seconds() - self.epoch_offsets
        mean_anomaly = self.m0 + self.n_rad * dt
        E = _kernels.kepler_eccentric_anomaly(mean_anomaly, self.ecc)
        cos_e, sin_e = np.cos(E), np.sin(E)
        one_m_ecos = 1.0 - self.ecc * cos_e
        r = self.sma * one_m_ecos
        root = np.sqrt(1.0 - self.ecc**2)
        x_pf = self.sma * (cos_e - self.ecc)
        y_pf = self.sma * root * sin_e
        vscale = np.sqrt(EARTH_MU * self.sma) / r
        vx_pf = -vscale * sin_e
        vy_pf = vscale * root * cos_e

        cos_o, sin_o = np.cos(self.raan), np.sin(self.raan)
        cos_i, sin_i = np.cos(self.inc), np.sin(self.inc)
        cos_w, sin_w = np.cos(self.argp), np.sin(self.argp)
        # perifocal basis vectors in ECI
        px = cos_o * cos_w - sin_o * sin_w * cos_i
        py = sin_o * cos_w + cos_o * sin_w * cos_i
        pz = sin_w * sin_i
        qx = -cos_o * sin_w - sin_o * cos_w * cos_i
        qy = -sin_o * sin_w + cos_o * cos_w * cos_i
        qz = cos_w * sin_i
        pos = np.stack([x_pf * px + y_pf * qx,
                        x_pf * py + y_pf * qy,
                        x_pf * pz + y_pf * qz], axis=1)
        vel = np.stack([vx_pf * px + vy_pf * qx,
                        vx_pf * py + vy_pf * qy,
                        vx_pf * pz + vy_pf * qz], axis=1)
        return pos, vel

    def states_ecef(self, t: datetime) -> tuple[np.ndarray, np.ndarray]:
        pos_eci, vel_eci = self.states_eci(t)
        theta = gmst_rad(t)
        c, s = np.cos(theta), np.sin(theta)
        rot = np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])
        pos = pos_eci @ rot.T
        vel = vel_eci @ rot.T
        # transport term for the rotating frame
        vel[:, 0] += EARTH_OMEGA * pos[:, 1]
        vel[:, 1] -= EARTH_OMEGA * pos[:, 0]
        return pos, vel


def _check_staleness(tle: TleRecord, t: datetime, staleness_days: float) -> None:
    age = abs((t - tle.epoch).total_seconds()) / SECONDS_PER_DAY
    if age > staleness_days:
        raise PropagationError(
            f"{tle.name or tle.catalog_number}: epoch {tle.epoch} is {age:.2f} days from {t}, "
            f"beyond the {staleness_days}-day staleness bound")


def propagate_eci(tle: TleRecord, t: datetime, staleness_days: float = 7.0):
    """Two-body inertial state at ``t``: (position, velocity) arrays."""
    _check_staleness(tle, t, staleness_days)
    pos, vel = ElementSet([tle]).states_eci(t)
    return pos[0], vel[0]


def propagate(tle: TleRecord, t: datetime, staleness_days: float = 7.0) -> OrbitState:
    """Two-body ECEF state at ``t`` (flavor 'true')."""
    _check_staleness(tle, t, staleness_days)
    pos, vel = ElementSet([tle]).states_ecef(t)
    return OrbitState(tle.catalog_number, t, pos[0], vel[0], flavor="true")


def propagate_all(elements: ElementSet, t: datetime,
                  staleness_days: float = 7.0) -> list[OrbitState]:
    """Propagate every satellite of an element set to ``t``."""
    for rec in elements.records:
        _check_staleness(rec, t, staleness_days)
    pos, vel = elements.states_ecef(t)
    return [OrbitState(int(elements.ids[k]), t, pos[k], vel[k], flavor="true")
            for k in range(len(elements.ids))]


# --------------------------------------------------------------------------
# Ephemeris error injection and visibility
# --------------------------------------------------------------------------

@lru_cache(maxsize=8192)
def _error_draws(spec: EphemerisErrorSpec, seed: int, satellite_id: int) -> tuple:
    """Four signed magnitudes (pos tangential/radial, vel radial/tangential).

    Draws depend only on (seed, satellite_id), so a satellite keeps one
    consistent error across every epoch of a scenario.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed & 0x7FFFFFFF, satellite_id, 0xE9]))
    magnitudes = np.array([spec.position_tangential_m, spec.position_radial_m,
                           spec.velocity_radial_mps, spec.velocity_tangential_mps])
    jitter = rng.uniform(1.0 - spec.per_satellite_jitter,
                         1.0 + spec.per_satellite_jitter, size=4)
    signs = rng.choice([-1.0, 1.0], size=4) if spec.randomize_sign else np.ones(4)
    return tuple(magnitudes * jitter * signs)


def inject_ephemeris_error(state: OrbitState, spec: EphemerisErrorSpec,
                           seed: int) -> OrbitState:
    """Produce the 'estimated' flavor of a true state with RTN offsets applied."""
    if state.flavor != "true":
        raise ValueError("ephemeris errors are injected onto true states only")
    if spec.is_zero():
        return OrbitState(state.satellite_id, state.epoch, state.position.copy(),
                          state.velocity.copy(), flavor="estimated")
    d_pos_t, d_pos_r, d_vel_r, d_vel_t = _error_draws(spec, seed, state.satellite_id)
    basis = frames.rtn_basis(state.position, state.velocity)
    position = state.position + d_pos_t * basis.along_track + d_pos_r * basis.radial
    velocity = state.velocity + d_vel_r * basis.radial + d_vel_t * basis.along_track
    if spec.orbit_consistent_velocity:
        r = float(np.linalg.norm(state.position))
        v = float(np.linalg.norm(state.velocity))
        # time-shift twin of the along-track offset
        velocity = velocity - (EARTH_MU / r**2) * (d_pos_t / v) * basis.radial
    return OrbitState(state.satellite_id, state.epoch, position, velocity,
                      flavor="estimated")


def visible_satellites(states: list[OrbitState], receiver: np.ndarray,
                       mask_deg: float) -> list[OrbitState]:
    """Subset of ``states`` above the elevation mask at ``receiver``, order kept."""
    if not 0.0 <= mask_deg < 90.0:
        raise ValueError("elevation mask must lie in [0, 90) degrees")
    if not states:
        return []
    up = frames.local_up(receiver)
    positions = np.array([s.position for s in states])
    elev = _kernels.elevations(positions, np.asarray(receiver, dtype=float), up)
    return [s for s, e in zip(states, elev) if e > mask_deg]
