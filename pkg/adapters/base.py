"""Base definitions for rate adapters - the observation contract and the adapter protocol"""
from dataclasses import dataclass
from typing import Protocol

from phy.link import McsIndex, TransmissionRecord
from sources.base import ChannelState, FlightState


@dataclass(frozen=True)
class AdapterObservation:
    """
    What the transmitter knows before sending frame `frame_index`.

    Attributes:
        frame_index: Index of the frame about to be sent.
        channel: Measured channel of the previous frame, read from its ACK (None before the first ACK).
        record: Outcome of the previous transmission (None for the first frame).
        flight: Latest sensor sample aligned to the previous frame (None before the first frame).
    """
    frame_index: int
    channel: ChannelState | None = None
    record: TransmissionRecord | None = None
    flight: FlightState | None = None


class RateAdapter(Protocol):
    """
    Protocol for rate adaptation algorithms.

    Adapters are single-owner mutable state: one instance drives one flight.
    """

    name: str

    def choose(self, obs: AdapterObservation) -> McsIndex:
        """Pick the MCS for obs.frame_index."""
        ...
