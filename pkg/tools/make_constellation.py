"""Generate the pinned Starlink-like TLE snapshot used by the shipped scenarios.

Builds 118 satellites at 550 km / 53-degree-class inclinations. Most are
arranged in along-track trains on ground tracks crossing the Suwon area so
that a multi-minute simulation window keeps 25-40 satellites above a
15-degree mask; the remainder are spread globally. Regenerate with:

    python3 tools/make_constellation.py [out.tle]

The output is deterministic.
"""

import math
import sys
from datetime import datetime
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

import numpy as np

from dopplab import frames, orbits
from dopplab.constants import EARTH_MU, SECONDS_PER_DAY

T0 = datetime(2026, 3, 1, 3, 0, 0)
BASE = frames.GeodeticCoord(37.282268, 127.043524, 50.0)
ALTITUDE_M = 550e3
SMA = 6378137.0 + ALTITUDE_M
MEAN_MOTION_RAD = math.sqrt(EARTH_MU / SMA**3)
MEAN_MOTION_REV_DAY = MEAN_MOTION_RAD * SECONDS_PER_DAY / (2.0 * math.pi)

# the fifteen names tabulated with the snapshot's two inclination shells
NAMED = [
    ("STARLINK-1403", 53.0524, 0.0001076), ("STARLINK-1542", 53.0527, 0.0001466),
    ("STARLINK-1553", 53.0530, 0.0001205), ("STARLINK-1029", 53.0533, 0.0001596),
    ("STARLINK-1658", 53.0536, 0.0001295), ("STARLINK-2039", 53.0540, 0.0001461),
    ("STARLINK-1219", 53.0543, 0.0001173), ("STARLINK-2549", 53.0548, 0.0001459),
    ("STARLINK-3548", 53.2142, 0.0000983), ("STARLINK-3742", 53.2157, 0.0001568),
    ("STARLINK-3701", 53.2160, 0.0001214), ("STARLINK-3542", 53.2166, 0.0000961),
    ("STARLINK-3541", 53.2170, 0.0001236), ("STARLINK-3560", 53.2174, 0.0001512),
    ("STARLINK-3633", 53.2177, 0.0001302),
]


def track_elements(lat_deg: float, lon_deg: float, inclination_deg: float,
                   descending: bool, at: datetime) -> tuple[float, float]:
    """(raan_deg, arg_lat_deg) putting the sub-satellite point at (lat, lon) at ``at``."""
    inc = math.radians(inclination_deg)
    lat = math.radians(lat_deg)
    s = math.sin(lat) / math.sin(inc)
    if abs(s) > 1.0:
        raise ValueError(f"latitude {lat_deg} unreachable at inclination {inclination_deg}")
    u = math.asin(s)
    if descending:
        u = math.pi - u
    lon_off = math.atan2(math.cos(inc) * math.sin(u), math.cos(u))
    raan = math.radians(lon_deg) + orbits.gmst_rad(at) - lon_off
    return math.degrees(raan) % 360.0, math.degrees(u) % 360.0


def build() -> list[orbits.TleRecord]:
    rng = np.random.default_rng(20260301)
    records = []
    sat_index = 0

    def next_identity():
        nonlocal sat_index
        if sat_index < len(NAMED):
            name, inc, ecc = NAMED[sat_index]
        else:
            name = f"STARLINK-{4000 + sat_index}"
            inc = 53.0524 if sat_index % 2 == 0 else 53.2142
            ecc = float(rng.integers(950, 1600)) * 1e-7
        sat_index += 1
        return name, 1000 + sat_index, inc, ecc

    # ten ground tracks through the visibility disc: lateral offsets in
    # degrees relative to the base, alternating pass direction, with
    # per-track time staggers so the in-view population stays steady
    tracks = [
        (-10.5, False, 0.0), (-7.0, True, 30.0), (-4.0, False, 60.0),
        (-1.5, True, 15.0), (0.5, False, 45.0), (2.0, True, 70.0),
        (4.5, False, 10.0), (7.0, True, 40.0), (9.5, False, 25.0),
        (11.5, True, 55.0),
    ]
    train_spacing_s = 90.0
    train_length = 8
    window_center_s = 210.0
    arc_rate_deg_s = math.degrees(MEAN_MOTION_RAD)
    for lon_off, descending, stagger_s in tracks:
        anchor_lat = BASE.latitude
        anchor_lon = BASE.longitude + lon_off
        for k in range(train_length):
            name, catalog, inc, ecc = next_identity()
            raan, arg_lat = track_elements(anchor_lat, anchor_lon, inc, descending, T0)
            # anchor-crossing times spread across the simulation window
            dt = (k - (train_length - 1) / 2.0) * train_spacing_s + window_center_s + stagger_s
            mean_anomaly = (arg_lat - arc_rate_deg_s * dt) % 360.0
            records.append(orbits.TleRecord(
                name, catalog, T0, inc, round(raan, 4), ecc, 0.0,
                round(mean_anomaly, 4), round(MEAN_MOTION_REV_DAY, 8)))

    # remaining satellites spread around the globe
    while len(records) < 118:
        name, catalog, inc, ecc = next_identity()
        records.append(orbits.TleRecord(
            name, catalog, T0, inc,
            round(float(rng.uniform(0, 360)), 4), ecc, 0.0,
            round(float(rng.uniform(0, 360)), 4), round(MEAN_MOTION_REV_DAY, 8)))
    return records


def coverage_report(records: list[orbits.TleRecord]) -> None:
    from datetime import timedelta

    elements = orbits.ElementSet(records)
    base_pos = frames.geodetic_to_ecef(BASE)
    far = frames.GeodeticCoord(BASE.latitude + 35.0 / 111.0, BASE.longitude, 30.0)
    far_pos = frames.geodetic_to_ecef(far)
    counts = []
    for second in range(0, 421, 10):
        states = orbits.propagate_all(elements, T0 + timedelta(seconds=second))
        vis_base = {s.satellite_id for s in orbits.visible_satellites(states, base_pos, 15.0)}
        vis_far = {s.satellite_id for s in orbits.visible_satellites(states, far_pos, 15.0)}
        counts.append(len(vis_base & vis_far))
    print(f"common visible over 0-420 s: min {min(counts)} max {max(counts)} "
          f"mean {sum(counts) / len(counts):.1f}")


def main() -> None:
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else (
        Path(__file__).resolve().parent.parent / "scenarios" / "starlink_snapshot.tle")
    records = build()
    lines = []
    for rec in records:
        lines.extend(orbits.emit_tle(rec))
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("\n".join(lines) + "\n")
    print(f"wrote {len(records)} TLEs to {out}")
    coverage_report(records)


if __name__ == "__main__":
    main()
