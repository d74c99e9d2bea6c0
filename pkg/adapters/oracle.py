"""OPT and Previous-OPT - omniscient references built on the simulator's ground-truth labels"""
from typing import Sequence

from adapters.base import AdapterObservation
from phy.link import McsIndex
from sources.base import ConfigurationError

ORACLE_KINDS = ("opt", "previous_opt")


def oracle_choose(kind: str, optimal: Sequence[int], last_received: int) -> McsIndex:
    """
    OPT sends the next frame at that frame's optimal MCS; Previous-OPT reuses
    the optimal MCS of the frame just received. At the end of the trace OPT
    falls back to Previous-OPT; before any frame was received both use frame 0.
    """
    if kind not in ORACLE_KINDS:
        raise ConfigurationError(f"Unknown oracle kind: {kind}")
    if len(optimal) == 0:
        raise ValueError("Oracle needs at least one ground-truth label")
    current = min(max(last_received, 0), len(optimal) - 1)
    if kind == "opt" and last_received + 1 < len(optimal):
        return int(optimal[last_received + 1])
    return int(optimal[current])


class OracleAdapter:
    def __init__(self, kind: str, optimal: Sequence[int]):
        if kind not in ORACLE_KINDS:
            raise ConfigurationError(f"Unknown oracle kind: {kind}")
        self.name = kind
        self.kind = kind
        self.optimal = list(optimal)

    def choose(self, obs: AdapterObservation) -> McsIndex:
        return oracle_choose(self.kind, self.optimal, obs.frame_index - 1)
