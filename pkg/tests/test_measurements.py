import math
from datetime import datetime, timedelta

import numpy as np
import pytest

from dopplab import frames, measurements, orbits
from dopplab.constants import SPEED_OF_LIGHT
from dopplab.measurements import (ClockModel, ClockSet, DopplerMeasurement,
                                  MeasurementSet)

EPOCH = datetime(2026, 3, 1, 3, 0, 0)
BASE_GEO = frames.GeodeticCoord(37.282268, 127.043524, 50.0)
BASE = frames.geodetic_to_ecef(BASE_GEO)


def overhead_state(sat_id=7, height=550e3, epoch=EPOCH) -> orbits.OrbitState:
    pos = frames.geodetic_to_ecef(
        frames.GeodeticCoord(BASE_GEO.latitude, BASE_GEO.longitude, height))
    up = frames.local_up(pos)
    east = np.cross([0.0, 0.0, 1.0], up)
    east /= np.linalg.norm(east)
    return orbits.OrbitState(sat_id, epoch, pos, 7.5e3 * east)


class TestGeometricRangeRate:
    def test_perpendicular_velocity_gives_zero(self):
        sat = overhead_state()
        # velocity eastward, LOS vertical: orthogonal by construction
        assert abs(measurements.geometric_range_rate(sat, BASE, np.zeros(3))) < 1e-9

    def test_receding_along_los(self):
        sat = overhead_state()
        los = (sat.position - BASE) / np.linalg.norm(sat.position - BASE)
        sat2 = orbits.OrbitState(7, EPOCH, sat.position, 7000.0 * los)
        assert abs(measurements.geometric_range_rate(sat2, BASE, np.zeros(3)) - 7000.0) < 1e-9

    def test_matches_finite_difference_of_range(self):
        rng = np.random.default_rng(17)
        for _ in range(20):
            sat_pos = BASE + rng.normal(scale=8e5, size=3)
            sat_vel = rng.normal(scale=5e3, size=3)
            rx_vel = rng.normal(scale=15.0, size=3)
            sat = orbits.OrbitState(1, EPOCH, sat_pos, sat_vel)
            got = measurements.geometric_range_rate(sat, BASE, rx_vel)
            h = 1e-3
            r_plus = np.linalg.norm((sat_pos + h * sat_vel) - (BASE + h * rx_vel))
            r_minus = np.linalg.norm((sat_pos - h * sat_vel) - (BASE - h * rx_vel))
            assert abs(got - (r_plus - r_minus) / (2 * h)) < 1e-4

    def test_coincident_positions_rejected(self):
        sat = orbits.OrbitState(1, EPOCH, BASE.copy(), np.array([1.0, 0.0, 0.0]))
        with pytest.raises(ValueError):
            measurements.geometric_range_rate(sat, BASE, np.zeros(3))


class TestDopplerConversion:
    def test_zero_shift(self):
        assert measurements.doppler_to_range_rate(0.0, 0.02648) == 0.0

    def test_direct_product(self):
        assert abs(measurements.doppler_to_range_rate(-1000.0, 0.02648) - 26.48) < 1e-12

    def test_transmit_frequency_chain(self):
        # approaching satellite at 7500 m/s LOS speed, Ku-band downlink
        f_t = 11.325e9
        wavelength = SPEED_OF_LIGHT / f_t
        doppler = 7500.0 / SPEED_OF_LIGHT * f_t
        assert abs(doppler - 2.8329e5) < 50.0
        rate = measurements.doppler_to_range_rate(doppler, wavelength)
        assert abs(rate + 7500.0) < 1e-9

    def test_inverse_is_exact(self):
        rng = np.random.default_rng(23)
        for _ in range(100):
            f_d = float(rng.uniform(-3e5, 3e5))
            lam = float(rng.uniform(0.01, 0.3))
            rate = measurements.doppler_to_range_rate(f_d, lam)
            assert measurements.range_rate_to_doppler(rate, lam) == pytest.approx(f_d, abs=0.0, rel=1e-15)

    def test_nonpositive_wavelength_rejected(self):
        with pytest.raises(ValueError):
            measurements.doppler_to_range_rate(1.0, 0.0)


class TestClockRateTerm:
    def test_all_zero(self):
        clk = ClockModel(EPOCH)
        assert measurements.clock_rate_term(clk, EPOCH + timedelta(seconds=10)) == 0.0

    def test_pure_drift(self):
        clk = ClockModel(EPOCH, drift_s_per_s=1e-9)
        got = measurements.clock_rate_term(clk, EPOCH + timedelta(seconds=100))
        assert abs(got - 0.299792458) < 1e-15

    def test_frequency_drift_accumulates(self):
        clk = ClockModel(EPOCH, drift_s_per_s=1e-9, frequency_drift_s_per_s2=1e-12)
        got = measurements.clock_rate_term(clk, EPOCH + timedelta(seconds=100))
        want = SPEED_OF_LIGHT * (1e-9 + 1e-12 * 100.0)
        assert abs(got - want) < 1e-12
        assert abs((got - 0.299792458) - SPEED_OF_LIGHT * 1e-10) < 1e-12


class TestSnrModel:
    def test_endpoints_without_jitter(self):
        assert measurements.snr_model(90.0) == pytest.approx(15.0, abs=1e-12)
        assert measurements.snr_model(15.0) == pytest.approx(5.0, abs=1e-12)

    def test_monte_carlo_mean_at_midpoint(self):
        total = 0.0
        for k in range(1000):
            rng = np.random.default_rng(1000 + k)
            total += measurements.snr_model(52.5, rng)
        assert abs(total / 1000.0 - 10.0) < 0.1

    def test_bad_elevation_rejected(self):
        with pytest.raises(ValueError):
            measurements.snr_model(0.0)


class TestSynthesize:
    def test_error_free_measurement_is_geometric(self):
        sat = overhead_state()
        clk = ClockModel(EPOCH)
        m = measurements.synthesize_measurement(
            sat, BASE, np.zeros(3), clk, clk, 0.0, 0.0, 11.325e9, "base")
        want = measurements.geometric_range_rate(sat, BASE, np.zeros(3))
        assert abs(m.pseudorange_rate_mps - want) < 1e-12

    def test_deterministic_under_same_streams(self):
        sat = overhead_state()
        clk = ClockModel(EPOCH, drift_s_per_s=1e-9, drift_noise_std=1e-11)
        args = (sat, BASE, np.zeros(3), clk, clk, 0.001, 0.1, 11.325e9, "base")
        m1 = measurements.synthesize_measurement(
            *args, rx_rng=np.random.default_rng(5), sat_rng=np.random.default_rng(6))
        m2 = measurements.synthesize_measurement(
            *args, rx_rng=np.random.default_rng(5), sat_rng=np.random.default_rng(6))
        assert m1.doppler_shift_hz == m2.doppler_shift_hz
        assert m1.snr_db == m2.snr_db

    def test_receiver_drift_shifts_rate_by_c_a1(self):
        sat = overhead_state()
        quiet = ClockModel(EPOCH)
        drifting = ClockModel(EPOCH, drift_s_per_s=1e-9)
        m0 = measurements.synthesize_measurement(
            sat, BASE, np.zeros(3), quiet, quiet, 0.0, 0.0, 11.325e9, "ut")
        m1 = measurements.synthesize_measurement(
            sat, BASE, np.zeros(3), drifting, quiet, 0.0, 0.0, 11.325e9, "ut")
        diff = m1.pseudorange_rate_mps - m0.pseudorange_rate_mps
        assert abs(diff - SPEED_OF_LIGHT * 1e-9) < 1e-12

    def test_below_horizon_rejected(self):
        sat = overhead_state()
        antipode = -sat.position
        sat_below = orbits.OrbitState(2, EPOCH, antipode, sat.velocity)
        clk = ClockModel(EPOCH)
        with pytest.raises(ValueError):
            measurements.synthesize_measurement(
                sat_below, BASE, np.zeros(3), clk, clk, 0.0, 0.0, 11.325e9, "base")

    def test_rate_doppler_invariant_exact(self):
        sat = overhead_state()
        clk = ClockModel(EPOCH, drift_s_per_s=3e-9)
        m = measurements.synthesize_measurement(
            sat, BASE, np.zeros(3), clk, clk, 0.01, 0.1, 11.325e9, "base",
            rx_rng=np.random.default_rng(9))
        assert m.pseudorange_rate_mps + m.doppler_shift_hz * m.carrier_wavelength_m == 0.0


class TestMeasurementSet:
    def _clocks(self, sat_ids):
        clk = ClockModel(EPOCH)
        return ClockSet(clk, clk, {i: clk for i in sat_ids})

    def test_empty_skies(self):
        mset = measurements.build_measurement_set(
            [], BASE, BASE + np.array([1000.0, 0, 0]), np.zeros(3),
            self._clocks([]), EPOCH, 0, seed=1)
        assert mset.common_satellite_ids == []
        assert mset.base == [] and mset.ut == []

    def test_satellite_visible_to_one_receiver_only_excluded_from_common(self):
        # terminal on the opposite side of Earth never sees the base's satellite
        sat = overhead_state(sat_id=5)
        far_ut = frames.geodetic_to_ecef(frames.GeodeticCoord(-37.0, -53.0, 0.0))
        mset = measurements.build_measurement_set(
            [sat], BASE, far_ut, np.zeros(3), self._clocks([5]), EPOCH, 0, seed=1)
        assert [m.satellite_id for m in mset.base] == [5]
        assert mset.ut == []
        assert mset.common_satellite_ids == []

    def test_common_ids_match_brute_force_intersection(self):
        rng = np.random.default_rng(29)
        recs = [orbits.TleRecord(f"S{k}", 300 + k, EPOCH, 53.05,
                                 float(rng.uniform(0, 360)), 1e-4, 0.0,
                                 float(rng.uniform(0, 360)), 15.05644)
                for k in range(40)]
        states = orbits.propagate_all(orbits.ElementSet(recs), EPOCH)
        ut_pos = frames.geodetic_to_ecef(frames.GeodeticCoord(37.0, 127.3, 100.0))
        mset = measurements.build_measurement_set(
            states, BASE, ut_pos, np.array([10.0, 5.0, 0.0]),
            self._clocks([s.satellite_id for s in states]), EPOCH, 0, seed=2)
        base_ids = {s.satellite_id for s in states
                    if frames.elevation_angle(s.position, BASE) > 15.0}
        ut_ids = {s.satellite_id for s in states
                  if frames.elevation_angle(s.position, ut_pos) > 15.0}
        assert mset.common_satellite_ids == sorted(base_ids & ut_ids)

    def test_satellite_clock_term_is_common_mode(self):
        sat = overhead_state(sat_id=9)
        quiet = ClockModel(EPOCH)
        noisy_sat = ClockModel(EPOCH, drift_s_per_s=5e-9, drift_noise_std=1e-10)
        clocks_quiet = ClockSet(quiet, quiet, {9: quiet})
        clocks_noisy = ClockSet(quiet, quiet, {9: noisy_sat})
        ut_pos = frames.geodetic_to_ecef(frames.GeodeticCoord(37.1, 127.2, 80.0))
        kw = dict(epoch=EPOCH, epoch_index=4, seed=11, noise_std_hz=0.0)
        m_a = measurements.build_measurement_set([sat], BASE, ut_pos, np.zeros(3),
                                                 clocks_quiet, **kw)
        m_b = measurements.build_measurement_set([sat], BASE, ut_pos, np.zeros(3),
                                                 clocks_noisy, **kw)
        delta_base = m_b.base[0].pseudorange_rate_mps - m_a.base[0].pseudorange_rate_mps
        delta_ut = m_b.ut[0].pseudorange_rate_mps - m_a.ut[0].pseudorange_rate_mps
        assert delta_base != 0.0
        assert abs(delta_base - delta_ut) < 1e-12

    def test_duplicate_satellite_rejected(self):
        m = DopplerMeasurement(1, EPOCH, 100.0, 0.0265, 10.0, "base")
        with pytest.raises(ValueError):
            MeasurementSet(EPOCH, [m, m], [])


class TestExchangeFile:
    def _build_sets(self):
        wavelength = SPEED_OF_LIGHT / 11.325e9
        sets = []
        for k in range(3):
            epoch = EPOCH + timedelta(seconds=k)
            base = [DopplerMeasurement(100 + i, epoch, 1000.0 * i + k + 0.123456789,
                                       wavelength, 8.0 + i, "base") for i in range(3)]
            ut = [DopplerMeasurement(100 + i, epoch, -500.0 * i + k, wavelength,
                                     7.5 + i, "ut") for i in range(2)]
            sets.append(MeasurementSet(epoch, base, ut))
        return sets

    def test_roundtrip(self, tmp_path):
        path = tmp_path / "exchange.csv"
        truth = {EPOCH: (np.array([1.0, 2.0, 3.0]), np.array([0.1, 0.2, 0.3]))}
        measurements.write_exchange_file(
            path, self._build_sets(), BASE, 11.325e9,
            ephemeris_error_header={"seed": 42, "position_tangential_m": 2500.0},
            truth=truth)
        loaded = measurements.read_exchange_file(path)
        assert np.array_equal(loaded.base_position, BASE)
        assert loaded.f_t_hz == 11.325e9
        assert loaded.ephemeris_error_header["seed"] == "42"
        assert len(loaded.sets) == 3
        original = self._build_sets()
        for got, want in zip(loaded.sets, original):
            assert got.epoch == want.epoch
            for g, w in zip(got.base + got.ut, want.base + want.ut):
                assert g.satellite_id == w.satellite_id
                assert g.doppler_shift_hz == w.doppler_shift_hz
                assert g.snr_db == w.snr_db
                assert g.receiver_id == w.receiver_id
        assert np.array_equal(loaded.truth[EPOCH][0], truth[EPOCH][0])

    def test_truncated_line_reports_line_number(self, tmp_path):
        path = tmp_path / "exchange.csv"
        measurements.write_exchange_file(path, self._build_sets(), BASE, 11.325e9)
        text = path.read_text().splitlines()
        text[6] = text[6].rsplit(",", 2)[0]
        path.write_text("\n".join(text) + "\n")
        with pytest.raises(ValueError, match="line 7"):
            measurements.read_exchange_file(path)

    def test_missing_base_position_rejected(self, tmp_path):
        path = tmp_path / "exchange.csv"
        path.write_text(measurements.EXCHANGE_COLUMNS + "\n")
        with pytest.raises(ValueError, match="base position"):
            measurements.read_exchange_file(path)
