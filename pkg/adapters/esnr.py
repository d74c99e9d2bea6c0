"""ESNR - effective SNR of the ACK's measured CSI against the PER model"""
import logging

import numpy as np

from adapters.base import AdapterObservation
from phy.link import DEFAULT_PHY, N_MCS, McsIndex, PhyConfig, best_feasible, esnr_table, per_from_esnr

logger = logging.getLogger(__name__)

DEFAULT_MARGIN = 0.05  # dB per m/s


class EsnrAdapter:
    """
    Highest MCS whose modelled loss rate at the measured ESNR is below the target.

    The dynamic variant raises every threshold by margin * v dB. The plain
    variant never reads the flight state.
    """

    def __init__(self, phy: PhyConfig = DEFAULT_PHY, dynamic: bool = False, margin: float = DEFAULT_MARGIN, name: str | None = None):
        self.phy = phy
        self.dynamic = dynamic
        self.margin = margin
        self.name = name or ("dynamic_esnr" if dynamic else "esnr")

    def velocity_margin(self, obs: AdapterObservation) -> float:
        if not self.dynamic or obs.flight is None:
            return 0.0
        return self.margin * obs.flight.v

    def choose(self, obs: AdapterObservation) -> McsIndex:
        if obs.channel is None:
            return 0
        effective = esnr_table(obs.channel.csi, self.phy) - self.velocity_margin(obs)
        pers = per_from_esnr(effective, np.arange(N_MCS), self.phy.payload_bits, self.phy)
        return int(best_feasible(pers, self.phy.per_target))
