"""Physical and geodetic constants shared across the package."""

# WGS-84 ellipsoid
WGS84_A = 6378137.0                    # semi-major axis, m
WGS84_F = 1.0 / 298.257223563          # flattening
WGS84_B = WGS84_A * (1.0 - WGS84_F)    # semi-minor axis, m
WGS84_E2 = WGS84_F * (2.0 - WGS84_F)   # first eccentricity squared

SPEED_OF_LIGHT = 299792458.0           # m/s
EARTH_MU = 3.986004418e14              # gravitational parameter, m^3/s^2
EARTH_OMEGA = 7.2921150e-5             # rotation rate, rad/s

SECONDS_PER_DAY = 86400.0

# Ku-band downlink default; per-satellite values may override in scenarios.
DEFAULT_TRANSMIT_FREQ_HZ = 11.325e9
