"""Tropospheric and ionospheric delay models and their time rates.

The same models serve two roles: corrupting synthesized measurements
(with "truth" parameters) and correcting them on the receiver side (with
possibly mismatched parameters), so the residual delay-rate errors that
survive into the solver are nonzero and realistic.
"""

from dataclasses import dataclass, field
from datetime import datetime
from typing import Callable

import numpy as np

from . import frames
from .constants import SPEED_OF_LIGHT
from .frames import GeodeticCoord

# Standard atmosphere defaults used when a scenario does not say otherwise.
DEFAULT_PRESSURE_HPA = 1013.25
DEFAULT_TEMPERATURE_K = 288.15
DEFAULT_WATER_VAPOR_HPA = 11.75

# Representative GPS broadcast ionosphere coefficients.
DEFAULT_ALPHA = (1.1176e-8, 1.4901e-8, -5.9605e-8, -1.1921e-7)
DEFAULT_BETA = (9.8304e4, 1.3107e5, -6.5536e4, -5.2429e5)

# Geomagnetic dipole pole (approximate, epoch 2020)
_GEOMAG_POLE_LAT = np.radians(80.65)
_GEOMAG_POLE_LON = np.radians(-72.68)


@dataclass(frozen=True)
class TropoConditions:
    """Inputs to the Saastamoinen zenith-scaled delay."""

    pressure_hpa: float
    temperature_k: float
    water_vapor_hpa: float
    zenith_distance_deg: float

    def __post_init__(self):
        if self.pressure_hpa <= 0:
            raise ValueError("pressure must be positive")
        if self.temperature_k <= 0:
            raise ValueError("temperature must be positive")
        if self.water_vapor_hpa < 0:
            raise ValueError("water vapor pressure must be non-negative")
        if not 0.0 <= self.zenith_distance_deg < 90.0:
            raise ValueError("zenith distance must lie in [0, 90) degrees")


@dataclass(frozen=True)
class IonoParams:
    """Inputs to the Klobuchar single-frequency delay."""

    alpha: tuple
    beta: tuple
    geomagnetic_latitude_sc: float  # semicircles
    local_time_s: float             # seconds of day
    obliquity_factor: float = 1.0

    def __post_init__(self):
        if len(self.alpha) != 4 or len(self.beta) != 4:
            raise ValueError("alpha and beta must each hold 4 coefficients")
        if self.obliquity_factor < 1.0:
            raise ValueError("obliquity factor must be >= 1")
        if not 0.0 <= self.local_time_s < 86400.0:
            raise ValueError("local time must lie in [0, 86400) seconds")


def saastamoinen_delay(c: TropoConditions) -> float:
    """Tropospheric delay in meters for the given surface conditions."""
    z = np.radians(c.zenith_distance_deg)
    wet = (1255.0 / c.temperature_k + 0.05) * c.water_vapor_hpa
    return float(0.002277 / np.cos(z)
                 * (c.pressure_hpa + wet - 1.16 * np.tan(z) ** 2))


def klobuchar_delay(p: IonoParams) -> float:
    """Ionospheric delay in meters from broadcast-style coefficients.

    Follows the usual model conventions: the amplitude term is floored at
    zero and the cosine expansion only applies within |phase| < 1.57; the
    night floor c*F*5e-9 holds everywhere else.
    """
    phi = p.geomagnetic_latitude_sc
    amplitude = sum(a * phi**n for n, a in enumerate(p.alpha))
    amplitude = max(amplitude, 0.0)
    period = sum(b * phi**n for n, b in enumerate(p.beta))
    if period <= 0.0:
        raise ValueError("beta coefficients give a non-positive period")
    x = 2.0 * np.pi * (p.local_time_s - 50400.0) / period
    if abs(x) >= 1.57:
        delay_s = 5e-9
    else:
        delay_s = 5e-9 + amplitude * (1.0 - x**2 / 2.0 + x**4 / 24.0)
    return float(SPEED_OF_LIGHT * p.obliquity_factor * delay_s)


def delay_rate(delay_fn: Callable[[float], float], t: float, dt: float = 0.1) -> float:
    """Central-difference time rate of a delay model, m/s."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    return (delay_fn(t + dt) - delay_fn(t - dt)) / (2.0 * dt)


def obliquity_factor(elevation_deg: float) -> float:
    """Klobuchar slant factor from elevation (semicircle cubic)."""
    e_sc = elevation_deg / 180.0
    return 1.0 + 16.0 * (0.53 - e_sc) ** 3


def geomagnetic_latitude_sc(g: GeodeticCoord) -> float:
    """Geodetic latitude rotated about the dipole pole, in semicircles."""
    lat = np.radians(g.latitude)
    lon = np.radians(g.longitude)
    s = (np.sin(lat) * np.sin(_GEOMAG_POLE_LAT)
         + np.cos(lat) * np.cos(_GEOMAG_POLE_LAT) * np.cos(lon - _GEOMAG_POLE_LON))
    return float(np.arcsin(np.clip(s, -1.0, 1.0)) / np.pi)


def local_time_of_day(t: datetime, longitude_deg: float) -> float:
    """Mean local solar time in seconds of day (UTC + 240 s per degree)."""
    utc_seconds = t.hour * 3600.0 + t.minute * 60.0 + t.second + t.microsecond * 1e-6
    return float((utc_seconds + 240.0 * longitude_deg) % 86400.0)


@dataclass(frozen=True)
class AtmosphereParams:
    """One full parameter set (either the simulated truth or a receiver's model)."""

    pressure_hpa: float = DEFAULT_PRESSURE_HPA
    temperature_k: float = DEFAULT_TEMPERATURE_K
    water_vapor_hpa: float = DEFAULT_WATER_VAPOR_HPA
    alpha: tuple = field(default=DEFAULT_ALPHA)
    beta: tuple = field(default=DEFAULT_BETA)


class SlantDelayCalculator:
    """Troposphere + ionosphere slant delay with receiver terms precomputed.

    Useful inside epoch loops where the same receiver sees many satellites:
    the geodetic conversion and geomagnetic latitude are computed once.
    """

    def __init__(self, rx_pos: np.ndarray):
        self.rx_pos = np.asarray(rx_pos, dtype=float)
        self.rx_geo = frames.ecef_to_geodetic(self.rx_pos)
        self.up = frames.local_up(self.rx_pos)
        self.geomagnetic_sc = geomagnetic_latitude_sc(self.rx_geo)

    def delay(self, params: AtmosphereParams, sat_pos: np.ndarray, t: datetime) -> float:
        los = np.asarray(sat_pos, dtype=float) - self.rx_pos
        rng = np.linalg.norm(los)
        elevation = float(np.degrees(np.arcsin(np.clip(los @ self.up / rng, -1.0, 1.0))))
        if elevation <= 0.0:
            raise ValueError("satellite below the horizon has no slant delay here")
        tropo = saastamoinen_delay(TropoConditions(
            params.pressure_hpa, params.temperature_k, params.water_vapor_hpa,
            90.0 - elevation))
        iono = klobuchar_delay(IonoParams(
            params.alpha, params.beta, self.geomagnetic_sc,
            local_time_of_day(t, self.rx_geo.longitude),
            obliquity_factor(elevation)))
        return tropo + iono


def slant_delay(params: AtmosphereParams, rx_pos: np.ndarray, sat_pos: np.ndarray,
                t: datetime) -> float:
    """Total troposphere + ionosphere delay along the line of sight, meters."""
    return SlantDelayCalculator(rx_pos).delay(params, sat_pos, t)
