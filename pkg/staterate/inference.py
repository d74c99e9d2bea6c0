"""Inference - rate distributions from the prediction and evaluation networks, plus rule-based evaluators"""
import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from nn.layers import softmax
from nn.network import N_CLASSES, EvaluationNetwork, LstmState, PredictionNetwork
from phy.link import DEFAULT_PHY, PhyConfig, best_feasible, esnr_table, per_from_esnr, snr_db_from_csi
from sources.base import ChannelState, ConfigurationError
from sources.sync import Standardizer, csi_planes, standardize_rssi

logger = logging.getLogger(__name__)

EVALUATION_SUBSTITUTES = ("snr", "esnr")


@dataclass(frozen=True)
class RateDistribution:
    """Probability of each of the 8 MCS indices; argmax ties go to the lower index."""
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (N_CLASSES,):
            raise ValueError(f"RateDistribution needs {N_CLASSES} weights, got shape {w.shape}")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-6:
            raise ValueError("RateDistribution weights must be non-negative and sum to 1 within 1e-6")

    @property
    def mcs(self) -> int:
        return int(np.argmax(self.weights))


def predict(
    network: PredictionNetwork,
    csi_feat: np.ndarray,
    state_feat: np.ndarray,
    lstm_state: LstmState | None = None,
) -> tuple[RateDistribution, LstmState]:
    """
    One recurrent step: featurized (C_n, S_n) -> W^P_{n+1} and the updated LSTM state.

    Pure given its arguments; the caller owns the LSTM state between frames.
    """
    logits, new_state, _ = network.forward(csi_feat[None, None], state_feat[None, None], lstm_state)
    return RateDistribution(softmax(logits[0, 0])), new_state


def predict_sequence(
    network: PredictionNetwork,
    csi_feats: np.ndarray,
    state_feats: np.ndarray,
    lstm_state: LstmState | None = None,
) -> tuple[np.ndarray, LstmState]:
    """W^P for a whole (T, 2, L) / (T, 4) sequence at once: (T, 8) probabilities."""
    logits, new_state, _ = network.forward(csi_feats[None], state_feats[None], lstm_state)
    return softmax(logits[0]), new_state


def evaluate(network: EvaluationNetwork, csi_feat: np.ndarray, rssi_feat: float) -> RateDistribution:
    """W^E_n for one featurized channel; stateless, so call order never matters."""
    logits, _ = network.forward(csi_feat[None], np.array([[rssi_feat]], dtype=float))
    return RateDistribution(softmax(logits[0]))


def evaluate_batch(network: EvaluationNetwork, csi_feats: np.ndarray, rssi_feats: np.ndarray) -> np.ndarray:
    logits, _ = network.forward(csi_feats, np.asarray(rssi_feats, dtype=float).reshape(-1, 1))
    return softmax(logits)


def evaluation_substitute(kind: str, phy: PhyConfig = DEFAULT_PHY) -> Callable[[np.ndarray], np.ndarray]:
    """
    Threshold rule standing in for the evaluation network.

    "snr" applies the PER model to the mean subcarrier SNR, "esnr" to the
    per-modulation effective SNR. Both map a stack of measured CSI vectors
    (F, N_sc) to one-hot (F, 8) distributions.
    """
    if kind not in EVALUATION_SUBSTITUTES:
        raise ConfigurationError(f"Unknown evaluation substitute: {kind} (choose from {', '.join(EVALUATION_SUBSTITUTES)})")

    def rule(csi: np.ndarray) -> np.ndarray:
        csi = np.atleast_2d(csi)
        if kind == "snr":
            snr = snr_db_from_csi(csi, phy.tx_power, phy.noise_floor).mean(axis=-1)
            effective = np.repeat(snr[:, None], N_CLASSES, axis=1)
        else:
            effective = esnr_table(csi, phy)
        pers = per_from_esnr(effective, np.arange(N_CLASSES), phy.payload_bits, phy)
        return np.eye(N_CLASSES)[best_feasible(pers, phy.per_target)]

    return rule


VirtualLabeler = EvaluationNetwork | Callable[[np.ndarray], np.ndarray]


def virtual_labels(
    source: VirtualLabeler,
    channels: Sequence[ChannelState],
    standardizer: Standardizer,
) -> np.ndarray:
    """W^E for every channel in order, from the evaluation network or a substitute rule: (F, 8)."""
    if not channels:
        return np.zeros((0, N_CLASSES))
    csi = np.stack([c.csi for c in channels])
    if isinstance(source, EvaluationNetwork):
        if standardizer is None:
            raise ConfigurationError("Standardization constants are required by the evaluation network")
        planes = (csi_planes(csi) - standardizer.csi_mean) / standardizer.csi_std
        rssi = np.array([c.rssi for c in channels])
        return evaluate_batch(source, planes, standardize_rssi(rssi, standardizer))
    return source(csi)

