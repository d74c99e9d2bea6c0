"""Tests for the 802.11 link model"""
import numpy as np
import pytest

from phy.link import (
    DEFAULT_PHY,
    N_MCS,
    Modulation,
    PhyConfig,
    TransmissionRecord,
    airtime,
    best_feasible,
    check_mcs,
    effective_snr_db,
    esnr,
    esnr_table,
    mcs_table,
    one_hot,
    optimal_mcs,
    per,
    per_table,
    simulate_tx,
    subcarrier_snr,
    throughput,
    transmit,
)
from sources.base import N_SUBCARRIERS, ChannelState, ConfigurationError


def flat_channel(snr_db: float) -> ChannelState:
    """Every subcarrier at the given SNR under the default transmit power and noise floor."""
    gain = 10 ** ((snr_db - DEFAULT_PHY.tx_power + DEFAULT_PHY.noise_floor) / 20)
    return ChannelState(np.full(N_SUBCARRIERS, gain, dtype=complex), 0.0)


class TestMcsTable:
    """Test mcs_table() and airtime()"""

    def test_rates(self):
        """Test the eight 20 MHz OFDM rates from 6 to 54 Mbps"""
        rates = [entry.data_rate for entry in mcs_table()]

        assert rates == pytest.approx([6, 9, 12, 18, 24, 36, 48, 54])
        assert mcs_table()[7].modulation is Modulation.QAM64

    def test_airtime(self):
        """Test airtime is preamble plus payload at the data rate"""
        assert airtime(7, 12000) == pytest.approx(60e-6 + 12000 / 54e6)
        assert airtime(0, 12000) > airtime(7, 12000)

    def test_check_mcs(self):
        """Test out-of-range MCS indices are rejected"""
        assert check_mcs(3) == 3
        with pytest.raises(ValueError):
            check_mcs(8)

    def test_thresholds_must_increase(self):
        """Test non-monotone thresholds are a configuration error"""
        with pytest.raises(ConfigurationError):
            PhyConfig(thresholds=(1, 2, 3, 4, 5, 6, 8, 7))

    def test_from_dict_rejects_unknown(self):
        """Test unknown phy settings are reported"""
        with pytest.raises(ConfigurationError):
            PhyConfig.from_dict({"bandwidth": 40})


class TestEffectiveSnr:
    """Test SNR and ESNR computation"""

    def test_flat_channel_esnr_equals_snr(self):
        """Test ESNR of a frequency-flat channel equals its SNR for every modulation"""
        channel = flat_channel(15.0)

        np.testing.assert_allclose(subcarrier_snr(channel), 15.0)
        for mcs in range(N_MCS):
            assert esnr(channel, mcs) == pytest.approx(15.0, abs=1e-3)

    def test_selective_channel_below_mean_snr(self):
        """Test a deep fade pulls ESNR below the mean subcarrier SNR"""
        snr = np.full(N_SUBCARRIERS, 20.0)
        snr[:8] = -5.0

        result = effective_snr_db(snr, Modulation.QAM16)

        assert result < snr.mean()

    def test_table_matches_single_mcs(self):
        """Test the vectorized table agrees with esnr()"""
        rng = np.random.default_rng(0)
        csi = flat_channel(20.0).csi * (1 + 0.3 * rng.normal(size=N_SUBCARRIERS))

        table = esnr_table(csi)

        for mcs in range(N_MCS):
            assert table[mcs] == pytest.approx(esnr(ChannelState(csi, 0.0), mcs))

    def test_zero_subcarrier_reads_minus_infinity(self):
        """Test a null subcarrier reads -inf SNR"""
        csi = np.ones(N_SUBCARRIERS, dtype=complex)
        csi[0] = 0.0

        assert subcarrier_snr(ChannelState(csi, 0.0))[0] == -np.inf


class TestPer:
    """Test per() and per_table()"""

    def test_per_falls_with_snr(self):
        """Test PER decreases as SNR grows"""
        assert per(4, flat_channel(10.0)) > per(4, flat_channel(15.0)) > per(4, flat_channel(25.0))

    def test_per_rises_with_mcs(self):
        """Test higher rates lose more frames on the same channel"""
        values = per_table(flat_channel(15.0).csi, 12000)

        assert np.all(np.diff(values) > 0)

    def test_longer_payload_loses_more(self):
        """Test PER grows with payload size"""
        channel = flat_channel(16.0)

        assert per(5, channel, 24000) > per(5, channel, 12000) > per(5, channel, 1200)

    def test_invalid_payload_fails(self):
        """Test a non-positive payload is rejected"""
        with pytest.raises(ValueError):
            per(0, flat_channel(10.0), 0)


class TestOptimalMcs:
    """Test best_feasible() and optimal_mcs()"""

    @pytest.mark.parametrize("snr, expected", [(30.0, 7), (12.0, 2), (-5.0, 0)])
    def test_label_rule(self, snr, expected):
        """Test the highest MCS under 10% loss is chosen, MCS 0 when none qualifies"""
        index, label = optimal_mcs(flat_channel(snr))

        assert index == expected
        np.testing.assert_array_equal(label, one_hot(expected))

    def test_best_feasible_vectorized(self):
        """Test the rule over a stack of PER rows"""
        rows = np.array([
            [0.0, 0.0, 0.05, 0.5, 0.9, 0.9, 0.9, 0.9],
            [0.5] * 8,
        ])

        np.testing.assert_array_equal(best_feasible(rows), [2, 0])


class TestTransmissions:
    """Test transmit(), simulate_tx() and throughput()"""

    def test_draw_below_reception_rate_succeeds(self):
        """Test success iff draw < 1 - PER"""
        assert transmit(0.2, 0.79, 3, 12000).success
        assert not transmit(0.2, 0.81, 3, 12000).success

    def test_record_fields(self):
        """Test the record carries MCS, payload and airtime"""
        record = transmit(0.0, 0.5, 7, 12000, frame_index=4)

        assert record == TransmissionRecord(4, 7, True, 12000, airtime(7, 12000))

    def test_simulate_tx_is_seeded(self):
        """Test simulated outcomes follow the generator"""
        channel = flat_channel(11.0)

        a = [simulate_tx(3, channel, 12000, np.random.default_rng(1)).success for _ in range(3)]
        b = [simulate_tx(3, channel, 12000, np.random.default_rng(1)).success for _ in range(3)]

        assert a == b

    def test_failure_rate_matches_per(self, mocker):
        """Test a 0.3 PER loses about 30% of many simulated frames"""
        mocker.patch("phy.link.per", return_value=0.3)
        rng = np.random.default_rng(5)
        channel = flat_channel(11.0)

        failures = [not simulate_tx(3, channel, 12000, rng).success for _ in range(20000)]

        assert 0.28 <= np.mean(failures) <= 0.32

    def test_throughput_all_success(self):
        """Test goodput of lossless MCS 7 frames"""
        records = [transmit(0.0, 0.5, 7, 12000, n) for n in range(10)]

        assert throughput(records) == pytest.approx(12000 / airtime(7, 12000) / 1e6)

    def test_failures_count_airtime_only(self):
        """Test failed frames add airtime but no payload"""
        ok = transmit(0.0, 0.5, 7, 12000)
        lost = transmit(1.0, 0.5, 7, 12000)

        assert throughput([ok, lost]) == pytest.approx(throughput([ok]) / 2)

    def test_empty_records_fail(self):
        """Test throughput of nothing is an error"""
        with pytest.raises(ValueError):
            throughput([])
