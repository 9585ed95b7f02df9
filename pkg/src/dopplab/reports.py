"""Artifact writers: per-epoch CSV, RMSE summaries, comparison tables, GeoJSON.

Every writer goes through an atomic temp-file-plus-rename so interrupted
runs never leave partial artifacts, and all numeric output is fixed-format
so repeated runs with the same seed produce byte-identical files.
"""

import json
import math
import os
import tempfile
from pathlib import Path

from . import frames
from .scenario import ScenarioResult

EPOCH_CSV_HEADER = ("epoch_iso8601,method,est_x,est_y,est_z,est_vx,est_vy,est_vz,"
                    "err_n,err_e,err_u,err_3d,iterations,converged,n_sats")
_EPOCH_FMT = "%Y-%m-%dT%H:%M:%S.%f"


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _num(value: float) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "nan"
    return "%.16e" % value


def write_epoch_csv(path, result: ScenarioResult) -> None:
    lines = [EPOCH_CSV_HEADER]
    for rec in result.records:
        if rec.estimate is not None:
            est = [_num(v) for v in rec.estimate.as_vector()]
            err = [_num(rec.error_neu.north), _num(rec.error_neu.east),
                   _num(rec.error_neu.up), _num(rec.error_3d)]
        else:
            est = ["nan"] * 6
            err = ["nan"] * 4
        lines.append(",".join([
            rec.epoch.strftime(_EPOCH_FMT), rec.method, *est, *err,
            str(rec.iterations), str(int(rec.converged)), str(rec.n_satellites)]))
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_rmse_csv(path, result: ScenarioResult) -> None:
    lines = ["method,rmse_north_m,rmse_east_m,rmse_up_m,rmse_3d_m,epochs,convergence_rate"]
    for method in result.config.methods:
        if method not in result.rmse:
            continue
        s = result.rmse[method]
        lines.append(f"{method},{_num(s.north_m)},{_num(s.east_m)},{_num(s.up_m)},"
                     f"{_num(s.threed_m)},{s.epoch_count},{_num(s.convergence_rate)}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def comparison_table(result: ScenarioResult) -> str:
    """Human table of per-method RMSE in the north/east/up frame."""
    rows = [f"Scenario: {result.config.name}",
            f"{'method':14s} {'North (m)':>10s} {'East (m)':>10s} {'Up (m)':>10s} {'3-D (m)':>10s}"]
    rows.append("-" * 58)
    for method in result.config.methods:
        if method not in result.rmse:
            rows.append(f"{method:14s} {'-':>10s} {'-':>10s} {'-':>10s} {'-':>10s}")
            continue
        s = result.rmse[method]
        rows.append(f"{method:14s} {s.north_m:10.3f} {s.east_m:10.3f} "
                    f"{s.up_m:10.3f} {s.threed_m:10.3f}")
    return "\n".join(rows) + "\n"


def write_geojson(path, result: ScenarioResult) -> None:
    """Ground-truth and per-method estimated tracks as LineString features."""
    features = []

    def feature(coords, props):
        return {"type": "Feature",
                "geometry": {"type": "LineString", "coordinates": coords},
                "properties": props}

    truth_coords = []
    for epoch in sorted(result.truth):
        g = frames.ecef_to_geodetic(result.truth[epoch][0])
        truth_coords.append([round(g.longitude, 9), round(g.latitude, 9)])
    features.append(feature(truth_coords, {"method": "truth"}))

    for method in result.config.methods:
        coords = []
        for rec in result.records:
            if rec.method != method or rec.estimate is None:
                continue
            g = frames.ecef_to_geodetic(rec.estimate.position)
            coords.append([round(g.longitude, 9), round(g.latitude, 9)])
        props = {"method": method}
        if method in result.rmse:
            s = result.rmse[method]
            props.update({"rmse_north_m": round(s.north_m, 4),
                          "rmse_east_m": round(s.east_m, 4),
                          "rmse_up_m": round(s.up_m, 4),
                          "rmse_3d_m": round(s.threed_m, 4)})
        features.append(feature(coords, props))
    doc = {"type": "FeatureCollection", "features": features}
    atomic_write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")
