"""Tests for StateRate inference, the training prober and offline/online training"""
from dataclasses import replace

import numpy as np
import pytest

from harness.acceptance import TINY_NETWORK, fc_change_at_fixed_point, non_fc_identical, scripted_prober_triggers
from nn.network import EvaluationNetwork, PredictionNetwork
from phy.link import DEFAULT_PHY
from sources.base import N_SUBCARRIERS, ChannelState, ConfigurationError, FlightState
from sources.sync import LabeledTrace, build_labeled_trace, featurize, fit_standardizer
from staterate.inference import (
    RateDistribution,
    evaluate,
    evaluation_substitute,
    predict,
    predict_sequence,
    virtual_labels,
)
from staterate.prober import ProberConfig, ProberState, prober_step
from staterate.training import (
    OnlineConfig,
    TrainingConfig,
    finetune_online,
    retrain_from_scratch,
    train_offline,
)

NETWORK = replace(TINY_NETWORK, n_subcarriers=N_SUBCARRIERS)
TAKEOFF = (0.0, 0.0, 0.0)
NEAR = FlightState(0.0, (10.0, 0.0, 0.0), 10.0, 0.0, 0.0)
FAR = FlightState(0.0, (100.0, 0.0, 0.0), 100.0, 0.0, 0.0)


def flat_channel(snr_db: float, t: float = 0.0) -> ChannelState:
    gain = 10 ** ((snr_db - DEFAULT_PHY.tx_power + DEFAULT_PHY.noise_floor) / 20)
    return ChannelState(np.full(N_SUBCARRIERS, gain, dtype=complex), DEFAULT_PHY.tx_power + 20 * np.log10(gain), t)


def synthetic_trace(frames: int = 40, seed: int = 0) -> LabeledTrace:
    """A flight moving away while the SNR swings between 5 and 30 dB."""
    rng = np.random.default_rng(seed)
    pairs = []
    for n in range(frames):
        t = 0.005 * n
        base = flat_channel(17.5 + 12.5 * np.sin(n / 5), t)
        ripple = 1 + 0.2 * (rng.normal(size=N_SUBCARRIERS) + 1j * rng.normal(size=N_SUBCARRIERS))
        channel = ChannelState(base.csi * ripple, base.rssi, t)
        pairs.append((channel, FlightState(t, (10.0 + n, 0.0, 0.0), 10.0 + n, 1.0, 0.0)))
    return build_labeled_trace(pairs, environment_name="square")


class TestRateDistribution:
    """Test RateDistribution validation"""

    def test_argmax_tie_goes_to_lower_index(self):
        """Test equal weights pick the lower MCS"""
        weights = np.zeros(8)
        weights[[2, 5]] = 0.5

        assert RateDistribution(weights).mcs == 2

    def test_rejects_bad_weights(self):
        """Test weights that are not a distribution over 8 rates fail"""
        with pytest.raises(ValueError):
            RateDistribution(np.full(8, 0.2))
        with pytest.raises(ValueError):
            RateDistribution(np.full(4, 0.25))


class TestInference:
    """Test predict(), evaluate() and the evaluation substitutes"""

    def test_predict_chains_like_a_sequence(self):
        """Test two single-frame calls with carried state equal a two-frame sequence"""
        trace = synthetic_trace(2)
        std = fit_standardizer([trace])
        network = PredictionNetwork(NETWORK)
        (p0, s0), (p1, s1) = (featurize(s, std) for s in trace.samples)

        first, state = predict(network, p0, s0)
        second, _ = predict(network, p1, s1, state)
        probs, _ = predict_sequence(network, np.stack([p0, p1]), np.stack([s0, s1]))

        np.testing.assert_allclose(probs[0], first.weights, atol=1e-12)
        np.testing.assert_allclose(probs[1], second.weights, atol=1e-12)

    def test_evaluate_is_stateless(self):
        """Test evaluation output does not depend on earlier calls"""
        trace = synthetic_trace(2)
        std = fit_standardizer([trace])
        network = EvaluationNetwork(NETWORK)
        (p0, s0), (p1, s1) = (featurize(s, std) for s in trace.samples)

        before = evaluate(network, p0, s0[3])
        evaluate(network, p1, s1[3])
        after = evaluate(network, p0, s0[3])

        np.testing.assert_array_equal(before.weights, after.weights)
        assert before.weights.sum() == pytest.approx(1.0)

    def test_virtual_labels_match_single_evaluations(self):
        """Test batched virtual labels equal frame-by-frame evaluation"""
        trace = synthetic_trace(5)
        std = fit_standardizer([trace])
        network = EvaluationNetwork(NETWORK)

        labels = virtual_labels(network, [s.channel for s in trace.samples], std)

        for row, sample in zip(labels, trace.samples):
            planes, state = featurize(sample, std)
            np.testing.assert_allclose(row, evaluate(network, planes, state[3]).weights, atol=1e-12)

    @pytest.mark.parametrize("kind", ["snr", "esnr"])
    def test_substitutes_on_flat_channels(self, kind):
        """Test rule evaluators pick the oracle rate on frequency-flat channels"""
        rule = evaluation_substitute(kind)

        labels = rule(np.stack([flat_channel(30.0).csi, flat_channel(-5.0).csi]))

        np.testing.assert_array_equal(labels.argmax(axis=1), [7, 0])

    def test_unknown_substitute_fails(self):
        """Test only snr and esnr substitutes exist"""
        with pytest.raises(ConfigurationError):
            evaluation_substitute("rssi")

    def test_virtual_labels_edge_cases(self):
        """Test no channels give no labels and a network without constants fails"""
        assert virtual_labels(evaluation_substitute("snr"), [], None).shape == (0, 8)
        with pytest.raises(ConfigurationError):
            virtual_labels(EvaluationNetwork(NETWORK), [flat_channel(10.0)], None)


class TestProber:
    """Test prober_step() trigger rules"""

    def test_scripted_flight(self):
        """Test degrading far from takeoff triggers at frames 7 and 13 with a 5-frame cooldown"""
        assert scripted_prober_triggers() == [7, 13]

    def test_no_trigger_until_window_full(self):
        """Test the first K - 1 frames never trigger"""
        state = ProberState(TAKEOFF, ProberConfig(window=10, cooldown=0))

        fired = [prober_step(state, FAR, False)[1] for _ in range(10)]

        assert fired == [False] * 9 + [True]
        assert state.triggers == 1

    def test_near_takeoff_needs_both_signals(self):
        """Test degraded accuracy near takeoff only triggers in OR mode"""
        both = ProberState(TAKEOFF, ProberConfig(window=5, cooldown=0))
        either = ProberState(TAKEOFF, ProberConfig(window=5, cooldown=0, require_both=False))

        for _ in range(5):
            _, fired_both = prober_step(both, NEAR, False)
            _, fired_either = prober_step(either, NEAR, False)

        assert not fired_both
        assert fired_either

    def test_accurate_far_flight_does_not_trigger(self):
        """Test distance alone is not enough"""
        state = ProberState(TAKEOFF, ProberConfig(window=5, cooldown=0))

        assert not any(prober_step(state, FAR, True)[1] for _ in range(20))
        assert state.windowed_accuracy == 1.0

    def test_buffer_keeps_most_recent(self):
        """Test the buffer is bounded and holds the latest samples"""
        state = ProberState(TAKEOFF, ProberConfig(window=2, buffer_capacity=3))
        channels = [flat_channel(float(n)) for n in range(5)]

        for channel in channels:
            prober_step(state, NEAR, True, channel)

        assert [c for c, _ in state.buffer] == channels[2:]

    def test_empty_window(self):
        """Test the windowed accuracy is undefined before any frame"""
        assert ProberState(TAKEOFF).windowed_accuracy is None

    def test_config_validation(self):
        """Test invalid thresholds and unknown keys are rejected"""
        with pytest.raises(ConfigurationError):
            ProberConfig(accuracy_threshold=0.0)
        with pytest.raises(ConfigurationError):
            ProberConfig.from_dict({"patience": 3})


class TestTrainOffline:
    """Test train_offline()"""

    def test_trains_both_networks(self):
        """Test a short run reports curves for every epoch and frame counts per split"""
        traces = [synthetic_trace(40, seed) for seed in range(2)]
        config = TrainingConfig(epochs=2, batch_size=8, window=4, validation_split=0.25)

        result = train_offline(traces, config, NETWORK)

        assert len(result.report["prediction"]["train_loss"]) == 2
        assert len(result.report["evaluation"]["val_accuracy"]) == 2
        assert result.report["frames"] == {"train": 58, "validation": 18}
        assert result.report["environments"] == ["square"]
        assert 0.0 <= result.report["prediction"]["val_accuracy"][-1] <= 1.0

    def test_evaluation_network_has_its_own_epochs(self):
        """Test evaluation_epochs sets the evaluation network's epoch count, epochs the prediction network's"""
        config = TrainingConfig(epochs=1, evaluation_epochs=3, batch_size=8, window=4, validation_split=0.25)

        result = train_offline([synthetic_trace(40)], config, NETWORK)

        assert len(result.report["prediction"]["train_loss"]) == 1
        assert len(result.report["evaluation"]["train_loss"]) == 3
        assert TrainingConfig(epochs=4).evaluation_epoch_count == 4
        with pytest.raises(ConfigurationError):
            TrainingConfig(evaluation_epochs=0)

    def test_standardizer_from_training_part(self):
        """Test constants come from the leading part of every trace only"""
        traces = [synthetic_trace(40, seed) for seed in range(2)]
        config = TrainingConfig(epochs=1, batch_size=8, window=4, validation_split=0.25)

        result = train_offline(traces, config, NETWORK)

        expected = fit_standardizer([LabeledTrace(t.samples[:30]) for t in traces])
        np.testing.assert_allclose(result.standardizer.state_mean, expected.state_mean)

    def test_shuffled_labels_run(self):
        """Test the permuted-label control trains without errors"""
        config = TrainingConfig(epochs=1, batch_size=8, window=4, shuffle_labels=True)

        result = train_offline([synthetic_trace(20)], config, NETWORK)

        assert result.report["training_config"]["shuffle_labels"] is True

    def test_empty_traces_fail(self):
        """Test training on nothing is a configuration error"""
        with pytest.raises(ConfigurationError):
            train_offline([LabeledTrace([])])

    def test_config_validation(self):
        """Test invalid training settings are rejected"""
        with pytest.raises(ConfigurationError):
            TrainingConfig(validation_split=1.0)
        with pytest.raises(ConfigurationError):
            TrainingConfig.from_dict({"momentum": 0.9})
        assert TrainingConfig(window=16).window_stride == 8


class TestOnlineTraining:
    """Test finetune_online() and retrain_from_scratch()"""

    def test_finetune_touches_fc_only(self):
        """Test only the FC group of a copy changes and the input network is left alone"""
        trace = synthetic_trace(20)
        std = fit_standardizer([trace])
        network = PredictionNetwork(NETWORK)
        snapshot = {k: v.copy() for k, v in network.parameters().items()}

        tuned = finetune_online(
            network, evaluation_substitute("esnr"), list(trace.frames()), std,
            OnlineConfig(epochs=2, batch_size=4, lr=1e-2),
        )

        assert tuned is not network
        assert non_fc_identical(network, tuned)
        assert not np.array_equal(tuned.parameters()["fc1.w"], network.parameters()["fc1.w"])
        for name, value in network.parameters().items():
            np.testing.assert_array_equal(value, snapshot[name])

    def test_fixed_point(self):
        """Test fine-tuning against the network's own predictions leaves the head where it is"""
        trace = synthetic_trace(20)

        change = fc_change_at_fixed_point(PredictionNetwork(NETWORK), trace, fit_standardizer([trace]))

        assert change < 1e-6

    def test_short_buffer_keeps_network(self, caplog):
        """Test a buffer with fewer than two samples is a warning, not an update"""
        network = PredictionNetwork(NETWORK)
        trace = synthetic_trace(1)

        result = finetune_online(network, evaluation_substitute("snr"), list(trace.frames()), fit_standardizer([trace]))

        assert result is network
        assert "keeping current parameters" in caplog.text

    def test_retrain_builds_new_network(self):
        """Test retraining returns a fresh network trained on the buffer"""
        trace = synthetic_trace(20)
        network = PredictionNetwork(NETWORK)

        fresh = retrain_from_scratch(
            list(trace.frames()), evaluation_substitute("esnr"), fit_standardizer([trace]), NETWORK,
            OnlineConfig(retrain_epochs=1, batch_size=4),
        )

        assert fresh is not network
        assert not np.array_equal(fresh.parameters()["lstm0.w"], network.parameters()["lstm0.w"])

    def test_retrain_needs_two_samples(self):
        """Test retraining on a single sample is rejected"""
        trace = synthetic_trace(1)

        with pytest.raises(ConfigurationError):
            retrain_from_scratch(list(trace.frames()), evaluation_substitute("snr"), fit_standardizer([trace]), NETWORK)

    def test_online_config_validation(self):
        """Test unknown online modes are rejected"""
        with pytest.raises(ConfigurationError):
            OnlineConfig(mode="distill")
