"""Pseudorange-rate (Doppler) measurement synthesis and exchange.

Sign convention throughout: pseudorange rate is positive for a receding
satellite and relates to the Doppler shift as rate = -doppler * wavelength,
so an approaching satellite (negative rate) shows a positive shift.

Synthesized measurements already include the residual atmospheric rate
error (truth model minus the receiver's correction model); solvers never
re-apply atmospheric corrections to them.
"""

from dataclasses import dataclass, field
from datetime import datetime
from typing import Callable, Optional

import numpy as np

from . import frames
from .constants import DEFAULT_TRANSMIT_FREQ_HZ, SPEED_OF_LIGHT
from .orbits import OrbitState

RECEIVER_IDS = ("base", "ut")


@dataclass(frozen=True)
class ClockModel:
    """Receiver or satellite clock polynomial with stochastic drift noise."""

    reference_time: datetime
    bias_s: float = 0.0
    drift_s_per_s: float = 0.0
    frequency_drift_s_per_s2: float = 0.0
    drift_noise_std: float = 0.0

    def __post_init__(self):
        if self.drift_noise_std < 0:
            raise ValueError("drift noise std must be non-negative")


@dataclass(frozen=True)
class DopplerMeasurement:
    """One satellite's pseudorange-rate observation at one receiver.

    The stored rate is derived from the Doppler shift at construction, so
    rate + doppler * wavelength is identically zero.
    """

    satellite_id: int
    epoch: datetime
    doppler_shift_hz: float
    carrier_wavelength_m: float
    snr_db: float
    receiver_id: str
    pseudorange_rate_mps: float = field(init=False)

    def __post_init__(self):
        if self.carrier_wavelength_m <= 0:
            raise ValueError("carrier wavelength must be positive")
        if self.receiver_id not in RECEIVER_IDS:
            raise ValueError(f"receiver_id must be one of {RECEIVER_IDS}")
        object.__setattr__(self, "pseudorange_rate_mps",
                           -self.doppler_shift_hz * self.carrier_wavelength_m)

    @classmethod
    def from_rate(cls, satellite_id: int, epoch: datetime, rate_mps: float,
                  wavelength_m: float, snr_db: float, receiver_id: str):
        return cls(satellite_id, epoch, -rate_mps / wavelength_m, wavelength_m,
                   snr_db, receiver_id)

    def with_rate_offset(self, delta_mps: float) -> "DopplerMeasurement":
        """Copy with the pseudorange rate shifted by ``delta_mps``."""
        return DopplerMeasurement.from_rate(
            self.satellite_id, self.epoch, self.pseudorange_rate_mps + delta_mps,
            self.carrier_wavelength_m, self.snr_db, self.receiver_id)


@dataclass(frozen=True)
class MeasurementSet:
    """Base and terminal observations sharing one epoch."""

    epoch: datetime
    base: list
    ut: list

    def __post_init__(self):
        for group in (self.base, self.ut):
            ids = [m.satellite_id for m in group]
            if len(ids) != len(set(ids)):
                raise ValueError("a satellite may appear at most once per receiver")

    @property
    def common_satellite_ids(self) -> list:
        base_ids = {m.satellite_id for m in self.base}
        ut_ids = {m.satellite_id for m in self.ut}
        return sorted(base_ids & ut_ids)

    def common_pairs(self) -> list:
        """(ut, base) measurement pairs for the common satellites, id-sorted."""
        base_by_id = {m.satellite_id: m for m in self.base}
        ut_by_id = {m.satellite_id: m for m in self.ut}
        return [(ut_by_id[i], base_by_id[i]) for i in self.common_satellite_ids]


def doppler_to_range_rate(doppler_hz: float, wavelength_m: float) -> float:
    if wavelength_m <= 0:
        raise ValueError("wavelength must be positive")
    return -doppler_hz * wavelength_m


def range_rate_to_doppler(rate_mps: float, wavelength_m: float) -> float:
    if wavelength_m <= 0:
        raise ValueError("wavelength must be positive")
    return -rate_mps / wavelength_m


def range_rate(sat_pos: np.ndarray, sat_vel: np.ndarray,
               rx_pos: np.ndarray, rx_vel: np.ndarray) -> float:
    """Signed line-of-sight relative speed; positive when receding."""
    los = np.asarray(sat_pos, dtype=float) - np.asarray(rx_pos, dtype=float)
    rng = np.linalg.norm(los)
    if rng == 0.0:
        raise ValueError("satellite and receiver positions coincide")
    return float((np.asarray(sat_vel) - np.asarray(rx_vel)) @ los / rng)


def geometric_range_rate(sat: OrbitState, rx_pos: np.ndarray,
                         rx_vel: np.ndarray) -> float:
    return range_rate(sat.position, sat.velocity, rx_pos, rx_vel)


def clock_rate_term(clock: ClockModel, t: datetime,
                    rng: Optional[np.random.Generator] = None) -> float:
    """Clock contribution to the pseudorange rate, m/s (scaled by c)."""
    dt = (t - clock.reference_time).total_seconds()
    rate_s_per_s = clock.drift_s_per_s + clock.frequency_drift_s_per_s2 * dt
    if rng is not None and clock.drift_noise_std > 0.0:
        rate_s_per_s += rng.normal(0.0, clock.drift_noise_std)
    return SPEED_OF_LIGHT * rate_s_per_s


def snr_model(elevation_deg: float, rng: Optional[np.random.Generator] = None,
              jitter_db: float = 0.2) -> float:
    """Elevation-dependent mean SNR in dB: 5 dB at 15 deg up to 15 dB at zenith.

    Adds uniform jitter of at most +-``jitter_db`` (capped at 1 dB) when an
    rng is supplied. The default keeps the jitter below the base/terminal
    SNR differences caused by geometry, so difference-based weighting stays
    informative.
    """
    if not 0.0 < elevation_deg <= 90.0:
        raise ValueError("elevation must lie in (0, 90] degrees")
    if not 0.0 <= jitter_db <= 1.0:
        raise ValueError("SNR jitter is bounded by 1 dB")
    snr = 5.0 + 10.0 * (elevation_deg - 15.0) / 75.0
    if rng is not None and jitter_db > 0.0:
        snr += rng.uniform(-jitter_db, jitter_db)
    return snr


def synthesize_measurement(sat_true: OrbitState, rx_pos: np.ndarray,
                           rx_vel: np.ndarray, rx_clock: ClockModel,
                           sat_clock: ClockModel, atmosphere_rate_mps: float,
                           noise_std_hz: float, f_t_hz: float,
                           receiver_id: str,
                           rx_rng: Optional[np.random.Generator] = None,
                           sat_rng: Optional[np.random.Generator] = None,
                           snr_jitter_db: float = 0.2,
                           snr_satellite_jitter_db: float = 0.8) -> DopplerMeasurement:
    """One receiver's pseudorange-rate observation of one satellite.

    Draw order from ``rx_rng`` is fixed (receiver clock noise, measurement
    noise, SNR jitter) so realizations depend only on the rng streams.
    The satellite stream must be shared between the two receivers: both its
    clock noise and its SNR offset (transmit-power variation) are satellite
    properties that enter the two receivers' measurements identically.
    """
    elevation = frames.elevation_angle(sat_true.position, rx_pos)
    if elevation <= 0.0:
        raise ValueError(f"satellite {sat_true.satellite_id} below horizon at synthesis")
    wavelength = SPEED_OF_LIGHT / f_t_hz
    rate = geometric_range_rate(sat_true, rx_pos, rx_vel)
    rate += clock_rate_term(rx_clock, sat_true.epoch, rx_rng)
    rate -= clock_rate_term(sat_clock, sat_true.epoch, sat_rng)
    rate += atmosphere_rate_mps
    if rx_rng is not None and noise_std_hz > 0.0:
        rate += rx_rng.normal(0.0, noise_std_hz * wavelength)
    snr = snr_model(elevation, rx_rng, jitter_db=snr_jitter_db)
    if sat_rng is not None and snr_satellite_jitter_db > 0.0:
        snr += sat_rng.uniform(-snr_satellite_jitter_db, snr_satellite_jitter_db)
    return DopplerMeasurement.from_rate(sat_true.satellite_id, sat_true.epoch,
                                        rate, wavelength, snr, receiver_id)


@dataclass(frozen=True)
class ClockSet:
    """All clock models active in a scenario."""

    base: ClockModel
    ut: ClockModel
    satellite: dict  # satellite_id -> ClockModel


def _stream(seed: int, epoch_index: int, satellite_id: int, salt: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(
        [seed & 0x7FFFFFFF, epoch_index, satellite_id, salt]))


def build_measurement_set(sats_true: list, base_pos: np.ndarray,
                          ut_pos: np.ndarray, ut_vel: np.ndarray,
                          clocks: ClockSet, epoch: datetime, epoch_index: int,
                          seed: int, mask_deg: float = 15.0,
                          noise_std_hz: float = 0.1,
                          f_t_hz: float = DEFAULT_TRANSMIT_FREQ_HZ,
                          atmosphere_residual: Optional[Callable] = None,
                          snr_jitter_db: float = 0.2) -> MeasurementSet:
    """Synthesize both receivers' observations for one epoch.

    Visibility is evaluated independently per receiver on the true states;
    ``atmosphere_residual(sat_state, rx_pos)`` supplies the leftover
    atmospheric rate error in m/s (zero when omitted).
    """
    from .orbits import visible_satellites

    base_meas = []
    ut_meas = []
    for receiver_id, rx_pos, rx_vel, rx_clock, out in (
            ("base", base_pos, np.zeros(3), clocks.base, base_meas),
            ("ut", ut_pos, ut_vel, clocks.ut, ut_meas)):
        rx_code = RECEIVER_IDS.index(receiver_id)
        for sat in visible_satellites(sats_true, rx_pos, mask_deg):
            sat_clock = clocks.satellite.get(sat.satellite_id)
            if sat_clock is None:
                raise KeyError(f"no clock model for satellite {sat.satellite_id}")
            atmos = (atmosphere_residual(sat, rx_pos)
                     if atmosphere_residual is not None else 0.0)
            out.append(synthesize_measurement(
                sat, rx_pos, rx_vel, rx_clock, sat_clock, atmos,
                noise_std_hz, f_t_hz, receiver_id,
                rx_rng=_stream(seed, epoch_index, sat.satellite_id, 10 + rx_code),
                sat_rng=_stream(seed, epoch_index, sat.satellite_id, 20),
                snr_jitter_db=snr_jitter_db))
    return MeasurementSet(epoch, base_meas, ut_meas)


# --------------------------------------------------------------------------
# Measurement exchange file (what the base sends to the terminal)
# --------------------------------------------------------------------------

_EPOCH_FMT = "%Y-%m-%dT%H:%M:%S.%f"
EXCHANGE_COLUMNS = "epoch,receiver_id,satellite_id,doppler_shift_hz,snr_db"


def write_exchange_file(path, sets: list, base_pos: np.ndarray, f_t_hz: float,
                        ephemeris_error_header: Optional[dict] = None,
                        truth: Optional[dict] = None) -> None:
    """Write measurement sets in the line-per-record exchange format.

    ``truth`` (epoch -> (position, velocity)) is an optional trailer used by
    offline comparisons; solvers ignore it.
    """
    lines = ["# dopplab exchange v1"]
    lines.append("# base_ecef_m,%.16e,%.16e,%.16e" % tuple(np.asarray(base_pos, dtype=float)))
    lines.append("# f_t_hz,%.16e" % f_t_hz)
    if ephemeris_error_header:
        kv = ",".join(f"{k}={v}" for k, v in sorted(ephemeris_error_header.items()))
        lines.append(f"# ephemeris_error,{kv}")
    lines.append(EXCHANGE_COLUMNS)
    for mset in sets:
        stamp = mset.epoch.strftime(_EPOCH_FMT)
        for meas in list(mset.base) + list(mset.ut):
            lines.append("%s,%s,%d,%.16e,%.16e" % (
                stamp, meas.receiver_id, meas.satellite_id,
                meas.doppler_shift_hz, meas.snr_db))
    if truth:
        for epoch in sorted(truth):
            pos, vel = truth[epoch]
            lines.append("# truth,%s,%.16e,%.16e,%.16e,%.16e,%.16e,%.16e" % (
                epoch.strftime(_EPOCH_FMT), *pos, *vel))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


@dataclass
class ExchangeFile:
    base_position: np.ndarray
    f_t_hz: float
    sets: list                      # MeasurementSet, epoch-ordered
    ephemeris_error_header: dict
    truth: dict                     # epoch -> (position, velocity)


def read_exchange_file(path) -> ExchangeFile:
    base_pos = None
    f_t = DEFAULT_TRANSMIT_FREQ_HZ
    eph_header: dict = {}
    truth: dict = {}
    by_epoch: dict = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line == EXCHANGE_COLUMNS or line.startswith("# dopplab"):
                continue
            try:
                if line.startswith("# base_ecef_m,"):
                    base_pos = np.array([float(v) for v in line.split(",")[1:4]])
                elif line.startswith("# f_t_hz,"):
                    f_t = float(line.split(",")[1])
                elif line.startswith("# ephemeris_error,"):
                    for pair in line.split(",")[1:]:
                        key, value = pair.split("=", 1)
                        eph_header[key] = value
                elif line.startswith("# truth,"):
                    parts = line.split(",")
                    epoch = datetime.strptime(parts[1], _EPOCH_FMT)
                    vals = [float(v) for v in parts[2:8]]
                    truth[epoch] = (np.array(vals[:3]), np.array(vals[3:]))
                elif line.startswith("#"):
                    continue
                else:
                    parts = line.split(",")
                    if len(parts) != 5:
                        raise ValueError(f"expected 5 columns, found {len(parts)}")
                    epoch = datetime.strptime(parts[0], _EPOCH_FMT)
                    meas = DopplerMeasurement(
                        satellite_id=int(parts[2]), epoch=epoch,
                        doppler_shift_hz=float(parts[3]),
                        carrier_wavelength_m=SPEED_OF_LIGHT / f_t,
                        snr_db=float(parts[4]), receiver_id=parts[1])
                    by_epoch.setdefault(epoch, {"base": [], "ut": []})[parts[1]].append(meas)
            except (ValueError, IndexError) as exc:
                raise ValueError(f"{path}: line {lineno}: {exc}") from exc
    if base_pos is None:
        raise ValueError(f"{path}: missing base position header")
    sets = [MeasurementSet(e, by_epoch[e]["base"], by_epoch[e]["ut"])
            for e in sorted(by_epoch)]
    return ExchangeFile(base_pos, f_t, sets, eph_header, truth)
