"""LEO Doppler positioning laboratory.

Synthesizes base-receiver and user-terminal pseudorange-rate measurements
from orbit data with injected ephemeris/clock/atmosphere errors and
estimates the terminal's position and velocity with differential and
double-difference weighted least squares solvers, including an ephemeris
error correction stage.
"""

__version__ = "0.1.0"
