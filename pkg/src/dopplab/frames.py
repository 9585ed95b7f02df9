"""Geodetic/ECEF/ENU/RTN coordinate conversions and elevation geometry.

ECEF positions and velocities are plain numpy arrays of shape (3,) in
meters / meters per second. Geodetic coordinates, local tangent plane
vectors, and orbit-attached triads get small value classes because their
fields are not interchangeable.
"""

from dataclasses import dataclass

import numpy as np

from .constants import WGS84_A, WGS84_B, WGS84_E2


@dataclass(frozen=True)
class GeodeticCoord:
    """WGS-84 geodetic coordinate; angles in degrees, height in meters."""

    latitude: float
    longitude: float
    height: float = 0.0

    def __post_init__(self):
        if not -90.0 <= self.latitude <= 90.0:
            raise ValueError(f"latitude {self.latitude} outside [-90, 90]")
        if not -180.0 < self.longitude <= 180.0:
            raise ValueError(f"longitude {self.longitude} outside (-180, 180]")


@dataclass(frozen=True)
class EnuVector:
    """Displacement in the local tangent plane at a stated reference point."""

    east: float
    north: float
    up: float

    def as_array(self) -> np.ndarray:
        return np.array([self.east, self.north, self.up])

    def norm(self) -> float:
        return float(np.sqrt(self.east**2 + self.north**2 + self.up**2))


@dataclass(frozen=True)
class RtnBasis:
    """Radial / along-track / cross-track orthonormal triad in ECEF."""

    radial: np.ndarray
    along_track: np.ndarray
    cross_track: np.ndarray


def geodetic_to_ecef(g: GeodeticCoord) -> np.ndarray:
    """Closed-form WGS-84 geodetic to ECEF conversion."""
    lat = np.radians(g.latitude)
    lon = np.radians(g.longitude)
    sin_lat = np.sin(lat)
    cos_lat = np.cos(lat)
    # prime vertical radius of curvature
    n = WGS84_A / np.sqrt(1.0 - WGS84_E2 * sin_lat * sin_lat)
    x = (n + g.height) * cos_lat * np.cos(lon)
    y = (n + g.height) * cos_lat * np.sin(lon)
    z = (n * (1.0 - WGS84_E2) + g.height) * sin_lat
    return np.array([x, y, z])


def ecef_to_geodetic(p: np.ndarray) -> GeodeticCoord:
    """Iterative ECEF to geodetic conversion (fixed-point in latitude).

    Converges well below 1e-6 m for any point from the surface out to
    deep space; inputs within 1 km of the geocenter are rejected as
    degenerate.
    """
    p = np.asarray(p, dtype=float)
    if np.linalg.norm(p) < 1000.0:
        raise ValueError("point within 1 km of Earth center has no useful geodetic form")
    x, y, z = p
    lon = np.arctan2(y, x)
    r = np.hypot(x, y)
    # start from the reduced latitude, iterate on the ellipsoid normal;
    # the height form r*cos + z*sin - N*(1 - e2*sin^2) stays well
    # conditioned at the poles where r/cos(lat) - N does not
    lat = np.arctan2(z, r * (1.0 - WGS84_E2))
    h = 0.0
    for _ in range(100):
        sin_lat = np.sin(lat)
        n = WGS84_A / np.sqrt(1.0 - WGS84_E2 * sin_lat * sin_lat)
        h = r * np.cos(lat) + z * sin_lat - n * (1.0 - WGS84_E2 * sin_lat * sin_lat)
        new_lat = np.arctan2(z, r * (1.0 - WGS84_E2 * n / (n + h)))
        done = abs(new_lat - lat) < 1e-14
        lat = new_lat
        if done:
            break
    return GeodeticCoord(np.degrees(lat), np.degrees(lon), float(h))


def enu_rotation(reference: GeodeticCoord) -> np.ndarray:
    """Rows are the east/north/up unit vectors at ``reference`` in ECEF."""
    lat = np.radians(reference.latitude)
    lon = np.radians(reference.longitude)
    sl, cl = np.sin(lat), np.cos(lat)
    so, co = np.sin(lon), np.cos(lon)
    return np.array([
        [-so, co, 0.0],
        [-sl * co, -sl * so, cl],
        [cl * co, cl * so, sl],
    ])


def ecef_to_enu(target: np.ndarray, reference: GeodeticCoord) -> EnuVector:
    """Rotate the displacement from ``reference`` to ``target`` into ENU."""
    d = np.asarray(target, dtype=float) - geodetic_to_ecef(reference)
    e, n, u = enu_rotation(reference) @ d
    return EnuVector(float(e), float(n), float(u))


def local_up(position: np.ndarray) -> np.ndarray:
    """Geodetic up unit vector at an ECEF position."""
    g = ecef_to_geodetic(position)
    lat = np.radians(g.latitude)
    lon = np.radians(g.longitude)
    return np.array([np.cos(lat) * np.cos(lon), np.cos(lat) * np.sin(lon), np.sin(lat)])


def elevation_angle(sat: np.ndarray, receiver: np.ndarray) -> float:
    """Elevation of the line of sight above the receiver's horizontal, degrees."""
    los = np.asarray(sat, dtype=float) - np.asarray(receiver, dtype=float)
    rng = np.linalg.norm(los)
    if rng == 0.0:
        raise ValueError("satellite and receiver positions coincide")
    s = np.clip(np.dot(los, local_up(receiver)) / rng, -1.0, 1.0)
    return float(np.degrees(np.arcsin(s)))


def rtn_basis(position: np.ndarray, velocity: np.ndarray) -> RtnBasis:
    """Radial / along-track / cross-track triad for an orbital state.

    radial points away from the geocenter, cross_track along the orbit
    normal, and along_track completes the right-handed triad (equal to the
    velocity direction for circular orbits).
    """
    position = np.asarray(position, dtype=float)
    velocity = np.asarray(velocity, dtype=float)
    r_norm = np.linalg.norm(position)
    v_norm = np.linalg.norm(velocity)
    if r_norm == 0.0 or v_norm == 0.0:
        raise ValueError("zero position or velocity has no RTN frame")
    radial = position / r_norm
    h = np.cross(position, velocity)
    h_norm = np.linalg.norm(h)
    if h_norm < 1e-9 * r_norm * v_norm:
        raise ValueError("position and velocity are parallel; RTN frame undefined")
    cross_track = h / h_norm
    along_track = np.cross(cross_track, radial)
    return RtnBasis(radial, along_track, cross_track)
