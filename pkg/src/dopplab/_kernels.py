"""Numeric hot kernels with two interchangeable backends.

The JIT backend wraps the loop-style implementations below with numba's
``@njit``; the fallback backend exposes vectorized pure-numpy versions of
the same functions. Selection happens once at import time via the
``DOPPLAB_NUMBA`` environment variable (set to ``0``/``false``/``no`` to
force the numpy path). Both backends produce the same results to floating
point roundoff; ``benchmarks/bench_kernels.py`` compares their speed.
"""

import os

import numpy as np

_KEPLER_TOL = 1e-14
_KEPLER_MAX_ITER = 30


def _use_numba() -> bool:
    flag = os.environ.get("DOPPLAB_NUMBA", "1").strip().lower()
    if flag in ("0", "false", "no", "off"):
        return False
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


# --------------------------------------------------------------------------
# Loop-style implementations (numba-friendly)
# --------------------------------------------------------------------------

def _kepler_eccentric_anomaly_loops(mean_anomaly, eccentricity):
    out = np.empty_like(mean_anomaly)
    for k in range(mean_anomaly.shape[0]):
        m = mean_anomaly[k]
        e = eccentricity[k]
        E = m + e * np.sin(m)
        for _ in range(_KEPLER_MAX_ITER):
            f = E - e * np.sin(E) - m
            step = f / (1.0 - e * np.cos(E))
            E = E - step
            if abs(step) < _KEPLER_TOL:
                break
        out[k] = E
    return out


def _los_range_rate_loops(sat_pos, sat_vel, rx_pos, rx_vel):
    n = sat_pos.shape[0]
    ranges = np.empty(n)
    rates = np.empty(n)
    units = np.empty((n, 3))
    for k in range(n):
        dx = sat_pos[k, 0] - rx_pos[0]
        dy = sat_pos[k, 1] - rx_pos[1]
        dz = sat_pos[k, 2] - rx_pos[2]
        r = np.sqrt(dx * dx + dy * dy + dz * dz)
        ranges[k] = r
        units[k, 0] = dx / r
        units[k, 1] = dy / r
        units[k, 2] = dz / r
        rates[k] = ((sat_vel[k, 0] - rx_vel[0]) * dx
                    + (sat_vel[k, 1] - rx_vel[1]) * dy
                    + (sat_vel[k, 2] - rx_vel[2]) * dz) / r
    return ranges, rates, units


def _elevations_loops(sat_pos, rx_pos, up):
    n = sat_pos.shape[0]
    out = np.empty(n)
    for k in range(n):
        dx = sat_pos[k, 0] - rx_pos[0]
        dy = sat_pos[k, 1] - rx_pos[1]
        dz = sat_pos[k, 2] - rx_pos[2]
        r = np.sqrt(dx * dx + dy * dy + dz * dz)
        s = (dx * up[0] + dy * up[1] + dz * up[2]) / r
        if s > 1.0:
            s = 1.0
        elif s < -1.0:
            s = -1.0
        out[k] = np.degrees(np.arcsin(s))
    return out


# --------------------------------------------------------------------------
# Vectorized pure-numpy fallbacks
# --------------------------------------------------------------------------

def _kepler_eccentric_anomaly_numpy(mean_anomaly, eccentricity):
    E = mean_anomaly + eccentricity * np.sin(mean_anomaly)
    for _ in range(_KEPLER_MAX_ITER):
        f = E - eccentricity * np.sin(E) - mean_anomaly
        step = f / (1.0 - eccentricity * np.cos(E))
        E = E - step
        if np.max(np.abs(step)) < _KEPLER_TOL:
            break
    return E


def _los_range_rate_numpy(sat_pos, sat_vel, rx_pos, rx_vel):
    d = sat_pos - rx_pos[np.newaxis, :]
    ranges = np.sqrt(np.sum(d * d, axis=1))
    units = d / ranges[:, np.newaxis]
    rates = np.sum((sat_vel - rx_vel[np.newaxis, :]) * units, axis=1)
    return ranges, rates, units


def _elevations_numpy(sat_pos, rx_pos, up):
    d = sat_pos - rx_pos[np.newaxis, :]
    r = np.sqrt(np.sum(d * d, axis=1))
    s = np.clip(d @ up / r, -1.0, 1.0)
    return np.degrees(np.arcsin(s))


NUMBA_ENABLED = _use_numba()

if NUMBA_ENABLED:
    from numba import njit

    kepler_eccentric_anomaly = njit(cache=True)(_kepler_eccentric_anomaly_loops)
    los_range_rate = njit(cache=True)(_los_range_rate_loops)
    elevations = njit(cache=True)(_elevations_loops)
else:
    kepler_eccentric_anomaly = _kepler_eccentric_anomaly_numpy
    los_range_rate = _los_range_rate_numpy
    elevations = _elevations_numpy
