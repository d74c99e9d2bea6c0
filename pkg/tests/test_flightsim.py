"""Tests for trajectory generation and sensor sampling"""
import math

import numpy as np
import pytest

from sources.base import ConfigurationError, SensorNoiseSpec, TrajectorySpec
from sources.flightsim import generate_trajectory, kinematics, sample_sensors


def spec(kind="constant_velocity", duration=2.0, height=30.0, **params):
    drift = params.pop("drift_sigma", 0.0)
    seed = params.pop("seed", 0)
    return TrajectorySpec(kind, duration, height, params, drift, seed)


class TestGenerateTrajectory:
    """Test generate_trajectory() for every flight kind"""

    def test_state_count_is_ceil_of_duration_over_dt(self):
        """Test 2 s at 5 ms steps gives 400 states with matching timestamps"""
        states = generate_trajectory(spec(duration=2.0), dt=0.005)

        assert len(states) == 400
        assert states[0].timestamp == 0.0
        assert states[-1].timestamp == pytest.approx(399 * 0.005)

    def test_constant_velocity_keeps_speed_and_zero_acceleration(self):
        """Test cruise flight reports the configured speed and no acceleration"""
        states = generate_trajectory(spec(speed=5.0, start_distance=5.0), dt=0.01)

        assert all(s.v == pytest.approx(5.0) for s in states)
        assert all(s.a == 0.0 for s in states)
        assert states[0].position == pytest.approx((5.0, 0.0, 30.0))

    def test_distance_is_norm_of_position(self):
        """Test d equals the distance from the receiver at the origin"""
        states = generate_trajectory(spec(kind="random", speed_cap=10.0, seed=3), dt=0.01)

        for s in states[::20]:
            assert s.d == pytest.approx(math.dist(s.position, (0.0, 0.0, 0.0)))

    def test_random_flight_respects_speed_cap(self):
        """Test random flight never exceeds the configured cap"""
        states = generate_trajectory(spec(kind="random", duration=20.0, speed_cap=4.0, seed=1), dt=0.01)

        assert max(s.v for s in states) <= 4.0 + 1e-9

    def test_back_and_forth_peak_speed(self):
        """Test sinusoidal flight reaches amplitude * 2 pi / period at the center"""
        states = generate_trajectory(
            spec(kind="variable_back_and_forth", duration=10.0, height=20.0, amplitude=15.0, period=10.0),
            dt=0.01,
        )

        assert states[0].v == pytest.approx(15.0 * 2 * math.pi / 10.0)
        assert min(s.v for s in states) < 0.1

    def test_back_and_forth_over_cap_fails(self):
        """Test a peak speed above the cap is a configuration error"""
        with pytest.raises(ConfigurationError):
            generate_trajectory(spec(kind="variable_back_and_forth", amplitude=50.0, period=5.0), dt=0.01)

    def test_hover_without_drift_is_static(self):
        """Test hovering with zero drift never moves"""
        states = generate_trajectory(spec(kind="hover", height=25.0, anchor_distance=10.0), dt=0.01)

        assert all(s.v == 0.0 and s.a == 0.0 for s in states)
        assert states[0].position == states[-1].position == (10.0, 0.0, 25.0)

    def test_hover_drift_stays_near_anchor(self):
        """Test hover drift is mean-reverting around the anchor"""
        states = generate_trajectory(
            spec(kind="hover", duration=30.0, height=25.0, anchor_distance=10.0, drift_sigma=1.0, seed=2), dt=0.01
        )
        k = kinematics(states)

        assert k.v.max() > 0.0
        assert np.abs(k.position - [10.0, 0.0, 25.0]).max() < 10.0

    def test_hover_offset_spread_is_drift_sigma(self):
        """Test the stationary spread of the hover offset around the anchor equals drift_sigma"""
        states = generate_trajectory(
            spec(kind="hover", duration=600.0, height=25.0, anchor_distance=10.0, drift_sigma=2.0, seed=5), dt=0.05
        )
        offsets = kinematics(states).position - [10.0, 0.0, 25.0]

        assert offsets.std() == pytest.approx(2.0, rel=0.15)
        assert abs(offsets.mean()) < 0.5

    def test_longer_drift_time_constant_is_slower(self):
        """Test a larger drift_tau gives a calmer hover at the same spread"""
        fast = generate_trajectory(spec(kind="hover", duration=60.0, drift_sigma=1.0, drift_tau=1.0, seed=6), dt=0.01)
        slow = generate_trajectory(spec(kind="hover", duration=60.0, drift_sigma=1.0, drift_tau=4.0, seed=6), dt=0.01)

        assert kinematics(slow).v.mean() < kinematics(fast).v.mean()

    def test_invalid_drift_parameters_fail(self):
        """Test a non-positive drift time constant is a configuration error"""
        with pytest.raises(ConfigurationError):
            generate_trajectory(spec(kind="hover", drift_sigma=1.0, drift_tau=0.0), dt=0.01)

    @pytest.mark.parametrize(
        "flight, tolerance",
        [
            (spec(kind="variable_back_and_forth", duration=5.0, height=20.0, amplitude=15.0, period=10.0), 1e-5),
            (spec(kind="random", duration=10.0, speed_cap=10.0, seed=8), 1e-6),
        ],
    )
    def test_velocity_matches_finite_differences(self, flight, tolerance):
        """Test central differences of position reproduce the reported speed"""
        dt = 1e-3
        k = kinematics(generate_trajectory(flight, dt=dt))

        fd = np.linalg.norm(k.position[2:] - k.position[:-2], axis=1) / (2 * dt)
        error = np.abs(fd - k.v[1:-1])

        # acceleration switches between random-flight segments cost one step each
        assert np.quantile(error, 0.99) < tolerance
        assert error.max() < 0.05

    def test_acceleration_matches_second_differences(self):
        """Test second differences of position reproduce the reported acceleration"""
        dt = 1e-3
        flight = spec(kind="variable_back_and_forth", duration=5.0, height=20.0, amplitude=15.0, period=10.0)
        k = kinematics(generate_trajectory(flight, dt=dt))

        second = np.linalg.norm(k.position[2:] - 2 * k.position[1:-1] + k.position[:-2], axis=1) / dt ** 2

        np.testing.assert_allclose(second, k.a[1:-1], atol=1e-3)

    def test_hover_velocity_matches_finite_differences(self):
        """Test the drift velocity agrees with the position increments up to the driving noise"""
        dt = 1e-3
        flight = spec(kind="hover", duration=20.0, height=25.0, anchor_distance=10.0, drift_sigma=1.0, seed=4)
        k = kinematics(generate_trajectory(flight, dt=dt))

        fd = np.linalg.norm(k.position[2:] - k.position[:-2], axis=1) / (2 * dt)

        assert np.mean(np.abs(fd - k.v[1:-1])) < 0.08

    def test_same_spec_same_flight(self):
        """Test generation is deterministic in the trajectory seed"""
        a = generate_trajectory(spec(kind="random", seed=9), dt=0.01)
        b = generate_trajectory(spec(kind="random", seed=9), dt=0.01)
        c = generate_trajectory(spec(kind="random", seed=10), dt=0.01)

        assert a == b
        assert a != c

    def test_invalid_dt_fails(self):
        """Test dt larger than the duration is rejected"""
        with pytest.raises(ConfigurationError):
            generate_trajectory(spec(duration=1.0), dt=2.0)

    def test_unknown_kind_fails(self):
        """Test unknown trajectory kinds are rejected when the TrajectorySpec is built"""
        with pytest.raises(ConfigurationError):
            TrajectorySpec("loop", 1.0, 10.0)


class TestTrajectorySpecFromDict:
    """Test TrajectorySpec.from_dict()"""

    def test_flat_params_are_collected(self):
        """Test unknown top-level keys end up in params as floats"""
        result = TrajectorySpec.from_dict({"kind": "random", "duration": 5, "height": 20, "speed_cap": 8})

        assert result.params == {"speed_cap": 8.0}
        assert result.duration == 5.0

    def test_missing_field_fails(self):
        """Test a missing height is a configuration error"""
        with pytest.raises(ConfigurationError):
            TrajectorySpec.from_dict({"kind": "random", "duration": 5})


class TestSampleSensors:
    """Test sample_sensors() decimation and noise"""

    def test_decimates_to_sensor_rate(self):
        """Test 200 Hz states sampled at 50 Hz keep every fourth state"""
        states = generate_trajectory(spec(duration=1.0), dt=0.005)

        sensors = sample_sensors(states, sensor_rate=50.0)

        assert len(sensors) == 50
        assert [s.timestamp for s in sensors] == [s.timestamp for s in states[::4]]

    def test_noiseless_sampling_copies_values(self):
        """Test zero noise keeps d, v and a exactly"""
        states = generate_trajectory(spec(duration=1.0), dt=0.01)

        sensors = sample_sensors(states, 100.0, SensorNoiseSpec(0.0, 0.0, 0.0))

        assert sensors == states

    def test_noise_spread_matches_sigma(self):
        """Test speed noise at sigma 0.1 shows an empirical spread between 0.07 and 0.13"""
        states = generate_trajectory(spec(duration=40.0, speed=5.0), dt=0.01)

        sensors = sample_sensors(states, 50.0, SensorNoiseSpec(sigma_v=0.1, seed=11))
        residual = np.array([s.v for s in sensors]) - 5.0

        assert len(sensors) == 2000
        assert 0.07 <= residual.std() <= 0.13

    def test_noise_is_seeded_and_non_negative(self):
        """Test noisy samples are reproducible and clamped at zero"""
        states = generate_trajectory(spec(kind="hover", duration=1.0), dt=0.01)
        noise = SensorNoiseSpec(sigma_v=1.0, sigma_a=1.0, sigma_d=0.5, seed=4)

        first = sample_sensors(states, 100.0, noise)
        second = sample_sensors(states, 100.0, noise)

        assert first == second
        assert all(s.v >= 0.0 and s.a >= 0.0 and s.d >= 0.0 for s in first)
        assert any(s.v > 0.0 for s in first)

    def test_rate_above_state_rate_fails(self):
        """Test sensors cannot sample faster than the state series"""
        states = generate_trajectory(spec(duration=1.0), dt=0.01)

        with pytest.raises(ConfigurationError):
            sample_sensors(states, sensor_rate=200.0)

    def test_empty_series(self):
        """Test an empty state series gives an empty sensor series"""
        assert sample_sensors([], 50.0) == []

    def test_negative_noise_fails(self):
        """Test negative sigmas are rejected"""
        with pytest.raises(ConfigurationError):
            SensorNoiseSpec(sigma_v=-1.0)
