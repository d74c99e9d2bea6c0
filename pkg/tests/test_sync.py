"""Tests for alignment, labeled traces, standardization and trace files"""
import json

import numpy as np
import pytest

from phy.link import DEFAULT_PHY, one_hot, optimal_mcs
from sources.base import N_SUBCARRIERS, ChannelState, ConfigurationError, FlightState, recent_frames
from sources.sync import (
    LabeledTrace,
    Standardizer,
    align,
    build_labeled_trace,
    csi_planes,
    featurize,
    featurize_trace,
    fit_standardizer,
    standardize_rssi,
)
from sources.trace_io import read_trace, write_trace


def flat_channel(snr_db: float, t: float = 0.0) -> ChannelState:
    gain = 10 ** ((snr_db - DEFAULT_PHY.tx_power + DEFAULT_PHY.noise_floor) / 20)
    csi = np.full(N_SUBCARRIERS, gain, dtype=complex)
    return ChannelState(csi, DEFAULT_PHY.tx_power + 20 * np.log10(gain), t)


def flight(t: float, d: float = 10.0, v: float = 1.0) -> FlightState:
    return FlightState(t, (d, 0.0, 0.0), d, v, 0.0)


def small_trace(snrs=(30.0, 12.0, -5.0, 30.0), truth=False) -> LabeledTrace:
    channels = [flat_channel(s, 0.005 * n) for n, s in enumerate(snrs)]
    flights = [flight(0.005 * n, d=10.0 + n, v=float(n)) for n in range(len(snrs))]
    return build_labeled_trace(
        list(zip(channels, flights)),
        true_channels=channels if truth else None,
        environment_name="square",
        metadata={"seed": 3},
    )


class TestAlign:
    """Test align() nearest-timestamp pairing"""

    def test_nearest_sample(self):
        """Test every channel takes the closest sensor sample"""
        channels = [flat_channel(20.0, t) for t in (0.0, 0.009, 0.021, 0.05)]
        sensors = [flight(t) for t in (0.0, 0.01, 0.02)]

        pairs = align(channels, sensors)

        assert [f.timestamp for _, f in pairs] == [0.0, 0.01, 0.02, 0.02]

    def test_tie_goes_to_earlier_sample(self):
        """Test a channel halfway between two samples takes the earlier one"""
        pairs = align([flat_channel(20.0, 0.5)], [flight(0.0), flight(1.0)])

        assert pairs[0][1].timestamp == 0.0

    def test_before_first_sample(self):
        """Test channels before the first sensor sample take the first one"""
        pairs = align([flat_channel(20.0, 0.0)], [flight(0.1), flight(0.2)])

        assert pairs[0][1].timestamp == 0.1

    def test_unsorted_fails(self):
        """Test unsorted timestamps are rejected"""
        with pytest.raises(ValueError):
            align([flat_channel(20.0, 1.0), flat_channel(20.0, 0.0)], [flight(0.0)])

    def test_empty_fails(self):
        """Test empty series are rejected"""
        with pytest.raises(ValueError):
            align([], [flight(0.0)])


class TestBuildLabeledTrace:
    """Test build_labeled_trace()"""

    def test_labels_follow_oracle(self):
        """Test vectorized labels equal the single-channel optimal MCS"""
        trace = small_trace()

        expected = [optimal_mcs(s.channel)[0] for s in trace.samples]
        np.testing.assert_array_equal(trace.labels(), expected)
        np.testing.assert_array_equal(trace.labels(), [7, 2, 0, 7])

    def test_labels_from_true_channels(self):
        """Test labels come from the noiseless channels when given"""
        channels = [flat_channel(-5.0), flat_channel(-5.0)]
        truth = [flat_channel(30.0), flat_channel(30.0)]

        trace = build_labeled_trace(list(zip(channels, [flight(0.0), flight(0.0)])), true_channels=truth)

        np.testing.assert_array_equal(trace.labels(), [7, 7])
        assert trace.samples[0].true_channel is truth[0]

    def test_custom_oracle(self):
        """Test an explicit oracle replaces the label rule"""
        trace = build_labeled_trace(
            [(flat_channel(30.0), flight(0.0))],
            oracle=lambda channel: (4, one_hot(4)),
        )

        assert trace.samples[0].mcs == 4

    def test_length_mismatch_fails(self):
        """Test true channels must match the aligned series"""
        with pytest.raises(ValueError):
            build_labeled_trace([(flat_channel(30.0), flight(0.0))], true_channels=[])

    def test_frames_iterates_pairs(self):
        """Test frames() yields (channel, flight) in order"""
        trace = small_trace()

        assert [f.v for _, f in trace.frames()] == [0.0, 1.0, 2.0, 3.0]

    def test_recent_frames(self):
        """Test the buffer keeps the newest frames"""
        trace = small_trace()

        assert [f.v for _, f in recent_frames(trace, 2)] == [2.0, 3.0]
        assert len(recent_frames(trace)) == 4


class TestStandardizer:
    """Test fit_standardizer(), featurize() and featurize_trace()"""

    def test_featurized_training_set_is_standardized(self):
        """Test features of the fitting set have zero mean and unit (or floored) std"""
        trace = small_trace()
        std = fit_standardizer([trace])

        planes, states, labels = featurize_trace(trace, std)

        assert planes.shape == (4, 2, N_SUBCARRIERS)
        assert states.shape == (4, 4)
        np.testing.assert_allclose(states.mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(states[:, 0].std(), 1.0)
        np.testing.assert_array_equal(labels, [7, 2, 0, 7])

    def test_constant_feature_std_floored(self):
        """Test a constant feature keeps std 1 instead of dividing by zero"""
        trace = small_trace()

        std = fit_standardizer([trace])

        # acceleration is zero in every frame
        assert std.state_std[2] == 1.0
        # imaginary planes are all zero
        np.testing.assert_array_equal(std.csi_std[1], 1.0)

    def test_featurize_matches_trace_rows(self):
        """Test single-frame featurization equals the vectorized rows"""
        trace = small_trace()
        std = fit_standardizer([trace])
        planes, states, _ = featurize_trace(trace, std)

        single_planes, single_state = featurize(trace.samples[2], std)

        np.testing.assert_allclose(single_planes, planes[2])
        np.testing.assert_allclose(single_state, states[2])
        np.testing.assert_allclose(standardize_rssi(trace.samples[2].channel.rssi, std), states[2, 3])

    def test_missing_constants_fail(self):
        """Test featurizing without standardization constants fails"""
        with pytest.raises(ConfigurationError):
            featurize(small_trace().samples[0], None)

    def test_empty_training_set_fails(self):
        """Test fitting on nothing fails"""
        with pytest.raises(ConfigurationError):
            fit_standardizer([LabeledTrace([])])

    def test_arrays_round_trip(self):
        """Test the constants survive a dict of arrays"""
        std = fit_standardizer([small_trace()])

        again = Standardizer.from_arrays(std.to_arrays())

        np.testing.assert_array_equal(again.state_mean, std.state_mean)

    def test_csi_planes(self):
        """Test complex CSI splits into real and imaginary planes"""
        planes = csi_planes(np.array([1 + 2j, 3 - 4j]))

        np.testing.assert_array_equal(planes, [[1.0, 3.0], [2.0, -4.0]])


class TestTraceFiles:
    """Test write_trace() and read_trace()"""

    def test_round_trip(self, tmp_path):
        """Test a written trace reads back identically"""
        trace = small_trace(truth=True)

        header = write_trace(trace, tmp_path / "flight")
        again = read_trace(tmp_path / "flight")

        assert header == tmp_path / "flight.json"
        assert again.environment_name == "square"
        assert again.metadata == {"seed": 3}
        np.testing.assert_array_equal(again.labels(), trace.labels())
        for a, b in zip(again.samples, trace.samples):
            np.testing.assert_array_equal(a.channel.csi, b.channel.csi)
            np.testing.assert_array_equal(a.true_channel.csi, b.true_channel.csi)
            assert a.channel.rssi == b.channel.rssi
            assert a.flight == b.flight

    def test_without_true_channels(self, tmp_path):
        """Test traces without ground truth read back with true_channel None"""
        write_trace(small_trace(), tmp_path / "flight")

        again = read_trace(tmp_path / "flight")

        assert all(s.true_channel is None for s in again.samples)

    def test_version_mismatch_fails(self, tmp_path):
        """Test an unknown format version is a configuration error"""
        header = write_trace(small_trace(), tmp_path / "flight")
        data = json.loads(header.read_text())
        header.write_text(json.dumps({**data, "version": 99}))

        with pytest.raises(ConfigurationError):
            read_trace(tmp_path / "flight")

    def test_truncated_csi_fails(self, tmp_path):
        """Test a short CSI block is detected"""
        write_trace(small_trace(), tmp_path / "flight")
        csi = tmp_path / "flight.csi"
        csi.write_bytes(csi.read_bytes()[:-16])

        with pytest.raises(ConfigurationError):
            read_trace(tmp_path / "flight")

    def test_missing_header_fails(self, tmp_path):
        """Test reading a trace that does not exist"""
        with pytest.raises(ConfigurationError):
            read_trace(tmp_path / "nothing")

    def test_empty_trace_refused(self, tmp_path):
        """Test writing an empty trace fails"""
        with pytest.raises(ValueError):
            write_trace(LabeledTrace([]), tmp_path / "flight")
