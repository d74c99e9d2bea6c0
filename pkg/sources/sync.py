"""Preprocessing - timestamp alignment, labeled traces and standardized model inputs"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

from phy.link import DEFAULT_PHY, PhyConfig, best_feasible, one_hot, per_table
from sources.base import ChannelState, ConfigurationError, FlightState

logger = logging.getLogger(__name__)

STATE_FEATURES = ("d", "v", "a", "rssi")

Oracle = Callable[[ChannelState], tuple[int, np.ndarray]]


@dataclass(frozen=True)
class TraceSample:
    """
    One frame of a labeled trace.

    Attributes:
        channel: CSI/RSSI as measured from the ACK (estimation noise included).
        flight: Sensor sample aligned to this frame.
        label: One-hot 8-vector of the optimal MCS for this frame.
        true_channel: Noiseless channel, kept by the simulator for oracle use.
    """
    channel: ChannelState
    flight: FlightState
    label: np.ndarray
    true_channel: ChannelState | None = None

    @property
    def mcs(self) -> int:
        return int(np.argmax(self.label))


@dataclass
class LabeledTrace:
    samples: list[TraceSample]
    environment_name: str = ""
    metadata: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.samples)

    def labels(self) -> np.ndarray:
        return np.array([s.mcs for s in self.samples], dtype=int)

    def frames(self) -> Iterator[tuple[ChannelState, FlightState]]:
        for sample in self.samples:
            yield sample.channel, sample.flight


def _check_sorted(timestamps: np.ndarray, name: str):
    if np.any(np.diff(timestamps) < 0):
        raise ValueError(f"{name} timestamps must be sorted")


def align(
    channel_series: Sequence[ChannelState],
    sensor_series: Sequence[FlightState],
) -> list[tuple[ChannelState, FlightState]]:
    """
    Pair every channel measurement with the sensor sample closest in time.

    Ties go to the earlier sensor sample. One sensor sample may serve many frames.
    """
    if not channel_series or not sensor_series:
        raise ValueError("align() needs non-empty channel and sensor series")

    channel_t = np.array([c.timestamp for c in channel_series], dtype=float)
    sensor_t = np.array([s.timestamp for s in sensor_series], dtype=float)
    _check_sorted(channel_t, "Channel")
    _check_sorted(sensor_t, "Sensor")

    right = np.clip(np.searchsorted(sensor_t, channel_t, side="left"), 0, len(sensor_t) - 1)
    left = np.clip(right - 1, 0, len(sensor_t) - 1)
    take_left = np.abs(channel_t - sensor_t[left]) <= np.abs(sensor_t[right] - channel_t)
    nearest = np.where(take_left, left, right)

    return [(channel, sensor_series[i]) for channel, i in zip(channel_series, nearest)]


def build_labeled_trace(
    aligned: Sequence[tuple[ChannelState, FlightState]],
    oracle: Oracle | None = None,
    *,
    phy: PhyConfig = DEFAULT_PHY,
    true_channels: Sequence[ChannelState] | None = None,
    environment_name: str = "",
    metadata: dict | None = None,
) -> LabeledTrace:
    """
    Attach L_n = one-hot(optimal MCS of C_n) to every aligned pair.

    Labels come from true_channels when given (the simulator knows them),
    otherwise from the aligned channel itself. Without an explicit oracle the
    optimal-MCS rule is evaluated for all frames at once.
    """
    if not aligned:
        raise ValueError("build_labeled_trace() needs at least one aligned sample")
    if true_channels is not None and len(true_channels) != len(aligned):
        raise ValueError("true_channels must match the aligned series in length")

    source = true_channels if true_channels is not None else [c for c, _ in aligned]
    if oracle is None:
        pers = per_table(np.stack([c.csi for c in source]), phy.payload_bits, phy)
        labels = [one_hot(int(i)) for i in best_feasible(pers, phy.per_target)]
    else:
        labels = [oracle(c)[1] for c in source]

    samples = [
        TraceSample(
            channel=channel,
            flight=flight,
            label=label,
            true_channel=true_channels[n] if true_channels is not None else None,
        )
        for n, ((channel, flight), label) in enumerate(zip(aligned, labels))
    ]
    return LabeledTrace(samples, environment_name, dict(metadata or {}))


@dataclass(frozen=True)
class Standardizer:
    """Training-set statistics, frozen for online use and stored with the network parameters."""
    csi_mean: np.ndarray
    csi_std: np.ndarray
    state_mean: np.ndarray
    state_std: np.ndarray

    def to_arrays(self) -> dict[str, np.ndarray]:
        return {
            "csi_mean": self.csi_mean,
            "csi_std": self.csi_std,
            "state_mean": self.state_mean,
            "state_std": self.state_std,
        }

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray]) -> "Standardizer":
        try:
            return cls(*(np.asarray(arrays[k], dtype=float) for k in ("csi_mean", "csi_std", "state_mean", "state_std")))
        except KeyError as e:
            raise ConfigurationError(f"Standardization constants missing {e}") from e


def csi_planes(csi: np.ndarray) -> np.ndarray:
    """Complex (..., N) -> real (..., 2, N) with real and imaginary planes."""
    csi = np.asarray(csi)
    return np.stack([csi.real, csi.imag], axis=-2)


def state_vector(flight: FlightState, rssi: float) -> np.ndarray:
    return np.array([flight.d, flight.v, flight.a, rssi], dtype=float)


def _raw_features(samples) -> tuple[np.ndarray, np.ndarray]:
    planes = csi_planes(np.stack([s.channel.csi for s in samples]))
    states = np.stack([state_vector(s.flight, s.channel.rssi) for s in samples])
    return planes, states


def _safe_std(x: np.ndarray) -> np.ndarray:
    std = x.std(axis=0)
    return np.where(std > 1e-12, std, 1.0)


def fit_standardizer(traces: Sequence[LabeledTrace]) -> Standardizer:
    samples = [s for trace in traces for s in trace.samples]
    if not samples:
        raise ConfigurationError("Cannot fit standardization constants on an empty training set")
    planes, states = _raw_features(samples)
    return Standardizer(planes.mean(axis=0), _safe_std(planes), states.mean(axis=0), _safe_std(states))


def standardize(planes: np.ndarray, states: np.ndarray, standardizer: Standardizer | None):
    if standardizer is None:
        raise ConfigurationError("Standardization constants are required to featurize samples")
    return (
        (planes - standardizer.csi_mean) / standardizer.csi_std,
        (states - standardizer.state_mean) / standardizer.state_std,
    )


def standardize_rssi(rssi: np.ndarray, standardizer: Standardizer | None) -> np.ndarray:
    """RSSI alone, scaled like the last entry of the state vector (the evaluation network's scalar input)."""
    if standardizer is None:
        raise ConfigurationError("Standardization constants are required to featurize samples")
    i = STATE_FEATURES.index("rssi")
    return (np.asarray(rssi, dtype=float) - standardizer.state_mean[i]) / standardizer.state_std[i]


def featurize(sample, standardizer: Standardizer | None) -> tuple[np.ndarray, np.ndarray]:
    """
    Model input for one frame: standardized (2, N_sc) CSI planes and the
    standardized (d, v, a, rssi) state vector.

    Accepts a TraceSample or a (ChannelState, FlightState) pair.
    """
    channel, flight = (sample.channel, sample.flight) if isinstance(sample, TraceSample) else sample
    return standardize(csi_planes(channel.csi), state_vector(flight, channel.rssi), standardizer)


def featurize_trace(trace: LabeledTrace, standardizer: Standardizer | None):
    """All frames of a trace at once: (F, 2, N_sc) planes, (F, 4) states, (F,) label indices."""
    planes, states = _raw_features(trace.samples)
    planes, states = standardize(planes, states, standardizer)
    return planes, states, trace.labels()
