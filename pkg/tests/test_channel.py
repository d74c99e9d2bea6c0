"""Tests for the air-to-ground channel model"""
import math

import numpy as np
import pytest

from scipy.special import j0

from sources.base import N_SUBCARRIERS, ChannelState, ConfigurationError, EnvironmentSpec
from sources.channel import (
    PRESETS,
    FadingState,
    add_estimation_noise,
    coherence_time,
    csi_similarity,
    environment_preset,
    evolve_fading,
    frequency_response,
    init_fading,
    path_loss_db,
    reciprocity_valid,
    render_csi,
    rssi_difference_stats,
    tap_powers,
)


def fade(env, seed, speed, frames, dt=0.005):
    state = init_fading(env, seed)
    channels = [render_csi(state, env, 30.0, 0.0)]
    for _ in range(frames - 1):
        state = evolve_fading(state, dt, speed, 2.4e9, env)
        channels.append(render_csi(state, env, 30.0, 0.0))
    return channels


class TestCoherenceTime:
    """Test coherence_time() and reciprocity_valid()"""

    def test_twenty_meters_per_second(self):
        """Test 20 m/s at 2.4 GHz gives about 2.644 ms"""
        assert coherence_time(20.0, 2.4e9) == pytest.approx(2.644e-3, abs=1e-6)

    def test_stationary_is_infinite(self):
        """Test a hovering UAV has an infinite coherence time"""
        assert coherence_time(0.0) == math.inf

    def test_negative_speed_fails(self):
        """Test negative speed is rejected"""
        with pytest.raises(ValueError):
            coherence_time(-1.0)

    def test_ack_within_coherence_time(self):
        """Test a SIFS-spaced ACK is reciprocal at 20 m/s but a 5 ms gap is not"""
        assert reciprocity_valid(10e-6, 20.0)
        assert not reciprocity_valid(5e-3, 20.0)
        assert reciprocity_valid(10.0, 0.0)


class TestPathLoss:
    """Test path_loss_db()"""

    def test_reference_distance(self):
        """Test the loss at 1 m equals pl0"""
        env = environment_preset("square")

        assert path_loss_db(env, 1.0) == pytest.approx(env.pl0)

    def test_ten_times_distance(self):
        """Test a decade of distance adds 10 * exponent dB"""
        env = environment_preset("grove")

        assert path_loss_db(env, 100.0) - path_loss_db(env, 10.0) == pytest.approx(10 * env.path_loss_exponent)

    def test_below_reference_is_clamped(self, caplog):
        """Test distances under 1 m are clamped with a warning"""
        env = environment_preset("square")

        assert path_loss_db(env, 0.1) == pytest.approx(env.pl0)
        assert "clamped" in caplog.text


class TestEnvironmentSpec:
    """Test presets and validation"""

    def test_presets(self):
        """Test the four named sites exist and resolve by name"""
        assert set(PRESETS) == {"square", "playground", "pool", "grove"}
        assert environment_preset("pool").name == "pool"

    def test_unknown_preset_fails(self):
        """Test unknown site names are configuration errors"""
        with pytest.raises(ConfigurationError):
            environment_preset("moon")

    def test_exponent_out_of_range_fails(self):
        """Test path-loss exponents outside [1.6, 4.0] are rejected"""
        with pytest.raises(ConfigurationError):
            EnvironmentSpec("bad", 5.0, 40.0, 1.0, 5.0, 2, 1e-7)

    def test_from_dict(self):
        """Test a custom environment from JSON fields"""
        env = EnvironmentSpec.from_dict({
            "name": "field", "path_loss_exponent": 2.0, "pl0": 40, "shadowing_sigma": 0,
            "rician_k": 12, "n_taps": 1, "tap_delay_spread": 0,
        })

        assert env.n_taps == 1
        assert env.shadow_decorrelation == 20.0


class TestFading:
    """Test init_fading(), evolve_fading() and render_csi()"""

    def test_csi_shape_and_rssi(self):
        """Test rendered CSI has one gain per subcarrier and RSSI from its power"""
        env = environment_preset("playground")

        channel = render_csi(init_fading(env, 1), env, 50.0, 0.0, tx_power=20.0)

        assert channel.csi.shape == (N_SUBCARRIERS,)
        assert channel.rssi == pytest.approx(20.0 + 10 * np.log10(np.mean(np.abs(channel.csi) ** 2)))

    def test_farther_is_weaker(self):
        """Test the same fading state is weaker at a larger distance"""
        env = environment_preset("square")
        state = init_fading(env, 2)

        assert render_csi(state, env, 100.0, 0.0).rssi < render_csi(state, env, 10.0, 0.0).rssi

    def test_estimation_noise_leaves_rssi(self):
        """Test estimation noise touches CSI but not the noiseless RSSI"""
        env = environment_preset("square")
        clean = render_csi(init_fading(env, 3), env, 20.0, 0.0)

        noisy = add_estimation_noise(clean, 0.1, np.random.default_rng(0))

        assert noisy.rssi == clean.rssi
        assert not np.array_equal(noisy.csi, clean.csi)
        assert add_estimation_noise(clean, 0.0, np.random.default_rng(0)) is clean

    def test_stationary_channel_is_frozen(self):
        """Test zero speed keeps scattered taps and shadowing unchanged"""
        env = environment_preset("grove")
        state = init_fading(env, 4)

        later = evolve_fading(state, 0.005, 0.0, 2.4e9, env)

        np.testing.assert_allclose(later.scattered, state.scattered)
        assert later.shadowing == state.shadowing

    def test_evolution_is_deterministic(self):
        """Test evolving the same state twice gives the same result"""
        env = environment_preset("pool")
        state = init_fading(env, 5)

        a = evolve_fading(state, 0.005, 8.0, 2.4e9, env)
        b = evolve_fading(state, 0.005, 8.0, 2.4e9, env)

        np.testing.assert_array_equal(a.scattered, b.scattered)

    def test_faster_flight_decorrelates_faster(self):
        """Test adjacent-frame CSI similarity drops with speed"""
        env = environment_preset("grove")

        slow = fade(env, 6, 0.5, 200)
        fast = fade(env, 6, 10.0, 200)

        def similarity(channels):
            return np.mean([csi_similarity(a.csi, b.csi) for a, b in zip(channels, channels[1:])])

        assert similarity(fast) < similarity(slow)

    def test_tap_count_mismatch_fails(self):
        """Test rendering a state built for another environment fails"""
        state = FadingState.from_taps([1.0, 0.5])

        with pytest.raises(ConfigurationError):
            render_csi(state, environment_preset("grove"), 10.0, 0.0)

    def test_negative_dt_fails(self):
        """Test a non-positive step is rejected"""
        env = environment_preset("square")

        with pytest.raises(ValueError):
            evolve_fading(init_fading(env, 0), 0.0, 1.0, 2.4e9, env)

    def test_lag_correlation_follows_clarke(self):
        """Test the lag-1 autocorrelation of a long tap sequence matches J0(2*pi*f_m*dt)"""
        env = EnvironmentSpec("tap", 2.0, 40.0, 0.0, 0.0, 1, 0.0)
        state = init_fading(env, 11)
        taps = [state.scattered[0]]
        for _ in range(20000):
            state = evolve_fading(state, 0.01, 10.0, 2.4e9, env)
            taps.append(state.scattered[0])
        taps = np.array(taps)

        rho = np.real(np.vdot(taps[:-1], taps[1:])) / np.vdot(taps, taps).real

        expected = j0(2 * math.pi * 80.0 * 0.01)
        assert expected == pytest.approx(-0.169, abs=0.005)
        assert rho == pytest.approx(expected, abs=0.05)

    def test_pure_los_tap_is_constant(self):
        """Test an infinite K-factor leaves the first tap magnitude fixed"""
        env = EnvironmentSpec("los", 2.0, 40.0, 0.0, math.inf, 3, 2e-7)

        channels = fade(env, 2, 15.0, 100)
        state = init_fading(env, 2)
        for _ in range(50):
            state = evolve_fading(state, 0.005, 15.0, 2.4e9, env)

        assert abs(state.taps[0]) == pytest.approx(1.0)
        np.testing.assert_allclose(state.taps[1:], 0.0)
        assert np.ptp([c.rssi for c in channels]) == pytest.approx(0.0, abs=1e-9)

    @pytest.mark.parametrize("name", list(PRESETS))
    def test_total_k_power_split(self, name):
        """Test LOS and scattered power add to one with LOS share K / (K + 1)"""
        env = environment_preset(name)
        state = init_fading(env, 0)
        k = 10 ** (env.rician_k / 10)

        assert abs(state.los[0]) ** 2 == pytest.approx(k / (k + 1))
        assert np.sum(tap_powers(env)) == pytest.approx(1.0)

    def test_two_equal_taps_produce_a_null(self):
        """Test two equal taps 1.6 us apart cancel on some subcarriers"""
        csi = np.abs(frequency_response(np.array([1.0, 1.0], dtype=complex), np.array([0.0, 1.6e-6])))

        assert np.ptp(csi) > 1.0
        assert csi.min() < 0.1 * csi.max()


class TestRssiDifferenceStats:
    """Test rssi_difference_stats()"""

    def test_groups_by_velocity_bin(self):
        """Test differences are attributed to the bin of the later frame"""
        channels = [ChannelState(np.ones(4), r) for r in (-50.0, -52.0, -49.0, -60.0)]

        stats = rssi_difference_stats(channels, [0.0, 1.0, 3.0, 7.0])

        assert stats["0-2"]["mean_abs_delta"] == pytest.approx(2.0)
        assert stats["2-6"]["max_abs_delta"] == pytest.approx(3.0)
        assert stats["6-10"]["frames"] == 1.0
        assert stats["0-2"]["csi_similarity"] == pytest.approx(1.0)

    def test_empty_bins_are_omitted(self):
        """Test bins without frames are left out"""
        channels = [ChannelState(np.ones(4), -50.0), ChannelState(np.ones(4), -51.0)]

        assert list(rssi_difference_stats(channels, [0.0, 0.5])) == ["0-2"]

    def test_length_mismatch_fails(self):
        """Test channels and speeds must line up"""
        with pytest.raises(ValueError):
            rssi_difference_stats([ChannelState(np.ones(4), -50.0)], [0.0, 1.0])
