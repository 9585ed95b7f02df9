import math
from datetime import datetime, timedelta

import numpy as np
import pytest

from dopplab import frames, orbits
from dopplab.constants import EARTH_MU
from dopplab.orbits import (ElementSet, EphemerisErrorSpec, TleParseError,
                            TleRecord, PropagationError)

EPOCH = datetime(2026, 3, 1, 3, 0, 0)


def make_record(sat_id=1403, name="STARLINK-1403", inclination=53.0524,
                ecc=0.0001076, raan=120.0, argp=0.0, mean_anomaly=10.0,
                mean_motion=15.05644400, epoch=EPOCH) -> TleRecord:
    return TleRecord(name, sat_id, epoch, inclination, raan, ecc, argp,
                     mean_anomaly, mean_motion)


def mean_anomaly_from_state(pos, vel):
    # classical elements from an inertial state, used as an oracle
    r = np.linalg.norm(pos)
    v2 = float(vel @ vel)
    a = 1.0 / (2.0 / r - v2 / EARTH_MU)
    e_cos = 1.0 - r / a
    e_sin = float(pos @ vel) / math.sqrt(EARTH_MU * a)
    E = math.atan2(e_sin, e_cos)
    return math.degrees(E - e_sin) % 360.0


class TestTleParsing:
    def test_roundtrip_preserves_table_values(self):
        rec = make_record()
        name, l1, l2 = orbits.emit_tle(rec)
        back = orbits.parse_tle(name, l1, l2)
        assert back.name == "STARLINK-1403"
        assert back.catalog_number == 1403
        assert abs(back.inclination_deg - 53.0524) < 1e-9
        assert abs(back.eccentricity - 0.0001076) < 1e-10
        assert back == rec

    def test_roundtrip_random_records(self):
        rng = np.random.default_rng(2)
        for k in range(50):
            rec = make_record(
                sat_id=int(rng.integers(1, 99999)),
                inclination=float(rng.uniform(0, 180)),
                ecc=float(rng.integers(0, 9999999)) * 1e-7,
                raan=float(np.round(rng.uniform(0, 360), 4)),
                argp=float(np.round(rng.uniform(0, 360), 4)),
                mean_anomaly=float(np.round(rng.uniform(0, 360), 4)),
                mean_motion=float(np.round(rng.uniform(11, 16), 8)),
            )
            got = orbits.parse_tle(*orbits.emit_tle(rec))
            assert abs(got.inclination_deg - rec.inclination_deg) < 5.1e-5
            assert abs(got.eccentricity - rec.eccentricity) < 1e-10
            assert abs(got.mean_motion_rev_day - rec.mean_motion_rev_day) < 1e-8
            assert abs((got.epoch - rec.epoch).total_seconds()) < 1e-3

    def test_corrupted_checksum_names_line(self):
        name, l1, l2 = orbits.emit_tle(make_record())
        bad = l1[:68] + str((int(l1[68]) + 1) % 10)
        with pytest.raises(TleParseError, match="line 1.*checksum"):
            orbits.parse_tle(name, bad, l2)

    def test_wrong_length_rejected(self):
        name, l1, l2 = orbits.emit_tle(make_record())
        with pytest.raises(TleParseError, match="line 2.*69"):
            orbits.parse_tle(name, l1, l2 + " ")

    def test_malformed_numeric_field_reports_columns(self):
        name, l1, l2 = orbits.emit_tle(make_record())
        bad = l2[:8] + "xx.xxxx " + l2[16:]
        bad = bad[:68] + str(orbits.tle_checksum(bad))
        with pytest.raises(TleParseError, match="columns 9-16"):
            orbits.parse_tle(name, l1, bad)

    def test_kepler_third_law_altitude(self):
        rec = make_record(mean_motion=15.05)
        n_rad = 15.05 * 2 * math.pi / 86400.0
        want_a = (EARTH_MU / n_rad**2) ** (1.0 / 3.0)
        assert abs(rec.semi_major_axis_m - want_a) < 1e-6
        assert abs(rec.semi_major_axis_m - 6928e3) < 5e3
        assert abs((rec.semi_major_axis_m - 6378.137e3) - 550e3) < 5e3

    def test_load_concatenated_file_and_directory(self, tmp_path):
        recs = [make_record(sat_id=100 + k, mean_anomaly=10.0 * k) for k in range(3)]
        text = "\n".join("\n".join(orbits.emit_tle(r)) for r in recs) + "\n"
        f = tmp_path / "snapshot.tle"
        f.write_text(text)
        loaded = orbits.load_tle_file(f)
        assert [r.catalog_number for r in loaded] == [100, 101, 102]
        loaded_dir = orbits.load_tle_file(tmp_path)
        assert len(loaded_dir) == 3


class TestPropagation:
    def test_mean_anomaly_identity_at_epoch(self):
        rec = make_record()
        pos, vel = orbits.propagate_eci(rec, rec.epoch)
        got = mean_anomaly_from_state(pos, vel)
        assert abs(got - rec.mean_anomaly_deg) < 1e-5

    def test_periodicity_in_inertial_frame(self):
        rec = make_record()
        p0, _ = orbits.propagate_eci(rec, rec.epoch)
        p1, _ = orbits.propagate_eci(rec, rec.epoch + timedelta(seconds=rec.period_s))
        assert np.linalg.norm(p1 - p0) < 1.0

    def test_vis_viva_speed_for_circular_orbit(self):
        rec = make_record(ecc=0.0, mean_motion=15.0565440)
        a = rec.semi_major_axis_m
        _, vel = orbits.propagate_eci(rec, rec.epoch + timedelta(seconds=321.0))
        assert abs(np.linalg.norm(vel) - math.sqrt(EARTH_MU / a)) < 1.0

    def test_energy_and_momentum_conserved_along_pass(self):
        rec = make_record()
        energies, momenta = [], []
        for dt in np.linspace(0.0, 600.0, 61):
            pos, vel = orbits.propagate_eci(rec, rec.epoch + timedelta(seconds=float(dt)))
            energies.append(float(vel @ vel) / 2.0 - EARTH_MU / np.linalg.norm(pos))
            momenta.append(np.linalg.norm(np.cross(pos, vel)))
        energies = np.array(energies)
        momenta = np.array(momenta)
        assert np.ptp(energies) < 1e-6 * abs(energies.mean())
        assert np.ptp(momenta) < 1e-6 * momenta.mean()

    def test_ecef_state_in_leo_bounds(self):
        st = orbits.propagate(make_record(), EPOCH + timedelta(seconds=100))
        assert 6.5e6 < np.linalg.norm(st.position) < 8.5e6
        assert 6e3 < np.linalg.norm(st.velocity) < 9e3
        assert st.flavor == "true"

    def test_staleness_bound_enforced(self):
        rec = make_record()
        with pytest.raises(PropagationError, match="staleness"):
            orbits.propagate(rec, rec.epoch + timedelta(days=8))

    def test_batch_matches_single(self):
        recs = [make_record(sat_id=10 + k, mean_anomaly=30.0 * k, raan=40.0 * k)
                for k in range(5)]
        t = EPOCH + timedelta(seconds=77)
        batch = orbits.propagate_all(ElementSet(recs), t)
        for rec, st in zip(recs, batch):
            single = orbits.propagate(rec, t)
            assert np.allclose(st.position, single.position, atol=1e-9)
            assert np.allclose(st.velocity, single.velocity, atol=1e-12)


class TestEphemerisErrorInjection:
    def setup_method(self):
        self.state = orbits.propagate(make_record(), EPOCH + timedelta(seconds=50))

    def test_zero_spec_is_identity(self):
        est = orbits.inject_ephemeris_error(self.state, EphemerisErrorSpec(), seed=1)
        assert est.flavor == "estimated"
        assert np.array_equal(est.position, self.state.position)
        assert np.array_equal(est.velocity, self.state.velocity)

    def test_norm_of_position_offset(self):
        spec = EphemerisErrorSpec(position_tangential_m=3000.0, position_radial_m=200.0,
                                  randomize_sign=False, per_satellite_jitter=0.0)
        est = orbits.inject_ephemeris_error(self.state, spec, seed=3)
        d = np.linalg.norm(est.position - self.state.position)
        assert abs(d - math.sqrt(3000.0**2 + 200.0**2)) < 1e-6
        assert abs(d - 3006.66) < 0.01

    def test_offset_projects_onto_rtn_axes(self):
        spec = EphemerisErrorSpec(position_tangential_m=3000.0, randomize_sign=True,
                                  per_satellite_jitter=0.0)
        basis = frames.rtn_basis(self.state.position, self.state.velocity)
        est = orbits.inject_ephemeris_error(self.state, spec, seed=5)
        d = est.position - self.state.position
        assert abs(abs(np.dot(d, basis.along_track)) - 3000.0) < 1e-6
        assert abs(np.dot(d, basis.radial)) < 1e-6
        assert abs(np.dot(d, basis.cross_track)) < 1e-6

    def test_rtn_norm_matches_spec_norm(self):
        spec = EphemerisErrorSpec(position_tangential_m=2500.0, position_radial_m=200.0,
                                  velocity_radial_mps=2.5, velocity_tangential_mps=0.5,
                                  randomize_sign=True, per_satellite_jitter=0.2)
        est = orbits.inject_ephemeris_error(self.state, spec, seed=9)
        d_pos = est.position - self.state.position
        d_vel = est.velocity - self.state.velocity
        basis = frames.rtn_basis(self.state.position, self.state.velocity)
        along = np.dot(d_pos, basis.along_track)
        radial = np.dot(d_pos, basis.radial)
        assert abs(np.linalg.norm(d_pos) - math.hypot(along, radial)) < 1e-9 * np.linalg.norm(d_pos)
        assert np.linalg.norm(d_vel) > 0

    def test_bit_reproducible(self):
        spec = EphemerisErrorSpec(position_tangential_m=2500.0, per_satellite_jitter=0.3)
        a = orbits.inject_ephemeris_error(self.state, spec, seed=11)
        b = orbits.inject_ephemeris_error(self.state, spec, seed=11)
        assert np.array_equal(a.position, b.position)
        assert np.array_equal(a.velocity, b.velocity)
        c = orbits.inject_ephemeris_error(self.state, spec, seed=12)
        assert not np.array_equal(a.position, c.position)

    def test_estimated_input_rejected(self):
        est = orbits.inject_ephemeris_error(self.state, EphemerisErrorSpec(), seed=1)
        with pytest.raises(ValueError):
            orbits.inject_ephemeris_error(est, EphemerisErrorSpec(), seed=1)


class TestVisibility:
    BASE = frames.geodetic_to_ecef(frames.GeodeticCoord(37.282268, 127.043524, 50.0))

    def test_empty_input(self):
        assert orbits.visible_satellites([], self.BASE, 15.0) == []

    def test_zenith_satellite_included(self):
        above = frames.geodetic_to_ecef(frames.GeodeticCoord(37.282268, 127.043524, 550e3))
        st = orbits.OrbitState(1, EPOCH, above, np.array([0.0, 7.5e3, 0.0]))
        assert orbits.visible_satellites([st], self.BASE, 15.0) == [st]

    def test_matches_brute_force_filter(self):
        rng = np.random.default_rng(4)
        recs = [make_record(sat_id=200 + k, mean_anomaly=float(rng.uniform(0, 360)),
                            raan=float(rng.uniform(0, 360))) for k in range(60)]
        states = orbits.propagate_all(ElementSet(recs), EPOCH + timedelta(seconds=30))
        got = orbits.visible_satellites(states, self.BASE, 15.0)
        want = [s for s in states
                if frames.elevation_angle(s.position, self.BASE) > 15.0]
        assert [s.satellite_id for s in got] == [s.satellite_id for s in want]

    def test_bad_mask_rejected(self):
        with pytest.raises(ValueError):
            orbits.visible_satellites([], self.BASE, 90.0)
