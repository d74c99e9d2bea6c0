"""CHARM - RSSI averaged over a time-weighted window against per-rate thresholds that adapt to losses"""
import logging
from collections import deque
from dataclasses import dataclass

import numpy as np

from adapters.base import AdapterObservation
from phy.link import DEFAULT_PHY, McsIndex, PhyConfig, TransmissionRecord
from sources.base import ConfigurationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CharmConfig:
    window: int = 20
    delta: float = 0.5  # dB
    success_streak: int = 10

    def __post_init__(self):
        if self.window < 1 or self.success_streak < 1 or self.delta < 0:
            raise ConfigurationError("CHARM window and success streak must be positive, delta non-negative")


class CharmAdapter:
    """
    Averages the last `window` ACK RSSI values with linearly increasing
    weights (newest heaviest) and picks the highest rate whose threshold is at
    or below the averaged SNR. A failure at the selected rate raises its
    threshold by delta; `success_streak` consecutive successes lower it by delta/10.
    """

    name = "charm"

    def __init__(self, config: CharmConfig = CharmConfig(), phy: PhyConfig = DEFAULT_PHY):
        self.config = config
        self.phy = phy
        self.thresholds = np.array(phy.thresholds, dtype=float)
        self.streaks = np.zeros(len(self.thresholds), dtype=int)
        self.history: deque[float] = deque(maxlen=config.window)

    def averaged_snr(self) -> float:
        rssi = np.array(self.history)
        weights = np.arange(1, len(rssi) + 1, dtype=float)
        return float(np.sum(weights * rssi) / np.sum(weights)) - self.phy.noise_floor

    def adapt(self, record: TransmissionRecord):
        r = record.mcs
        if record.success:
            self.streaks[r] += 1
            if self.streaks[r] >= self.config.success_streak:
                self.thresholds[r] -= self.config.delta / 10
                self.streaks[r] = 0
        else:
            self.thresholds[r] += self.config.delta
            self.streaks[r] = 0
            logger.debug(f"CHARM: threshold of MCS {r} raised to {self.thresholds[r]:.2f} dB")

    def choose(self, obs: AdapterObservation) -> McsIndex:
        if obs.record is not None:
            self.adapt(obs.record)
        if obs.channel is not None:
            self.history.append(obs.channel.rssi)
        if not self.history:
            return 0
        feasible = np.flatnonzero(self.thresholds <= self.averaged_snr())
        return int(feasible[-1]) if feasible.size else 0
