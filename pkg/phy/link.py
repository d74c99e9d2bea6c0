"""802.11 OFDM link model - MCS table, SNR/ESNR, PER, transmissions and the optimal-MCS oracle"""
import functools
import logging
import math
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy.special import expit, log_ndtr, logsumexp, ndtri_exp

from sources.base import ChannelState, ConfigurationError
from sources.channel import NOISE_FLOOR_DBM, TX_POWER_DBM

logger = logging.getLogger(__name__)

N_MCS = 8
DATA_SUBCARRIERS = 48
SYMBOL_TIME = 4e-6
REFERENCE_PAYLOAD_BITS = 1500 * 8

McsIndex = int


class Modulation(Enum):
    BPSK = 2
    QPSK = 4
    QAM16 = 16
    QAM64 = 64

    @property
    def bits_per_symbol(self) -> int:
        return int(math.log2(self.value))


_RATE_SET = (
    (Modulation.BPSK, Fraction(1, 2)),
    (Modulation.BPSK, Fraction(3, 4)),
    (Modulation.QPSK, Fraction(1, 2)),
    (Modulation.QPSK, Fraction(3, 4)),
    (Modulation.QAM16, Fraction(1, 2)),
    (Modulation.QAM16, Fraction(3, 4)),
    (Modulation.QAM64, Fraction(2, 3)),
    (Modulation.QAM64, Fraction(3, 4)),
)


@dataclass(frozen=True)
class McsEntry:
    index: McsIndex
    modulation: Modulation
    code_rate: Fraction
    bits_per_symbol: int
    data_rate: float  # Mbps
    snr_threshold: float  # dB, PER-curve midpoint


@dataclass(frozen=True)
class PhyConfig:
    """
    Link parameters, overridable from the scenario JSON.

    Attributes:
        thresholds: PER midpoint per MCS in dB, strictly increasing.
        slope: Logistic PER slope per dB.
        tx_power: Transmit power in dBm.
        noise_floor: Noise floor in dBm.
        preamble: Preamble plus MAC overhead airtime in seconds.
        payload_bits: Default payload per frame.
        per_target: Loss rate below which an MCS counts as feasible.
    """
    thresholds: tuple[float, ...] = (2.0, 5.0, 8.0, 11.0, 15.0, 19.0, 22.0, 25.0)
    slope: float = 2.0
    tx_power: float = TX_POWER_DBM
    noise_floor: float = NOISE_FLOOR_DBM
    preamble: float = 60e-6
    payload_bits: int = REFERENCE_PAYLOAD_BITS
    per_target: float = 0.10

    def __post_init__(self):
        if len(self.thresholds) != N_MCS:
            raise ConfigurationError(f"Expected {N_MCS} MCS thresholds, got {len(self.thresholds)}")
        if any(b <= a for a, b in zip(self.thresholds, self.thresholds[1:])):
            raise ConfigurationError("MCS thresholds must be strictly increasing")
        if not self.slope > 0 or self.payload_bits <= 0 or self.preamble < 0:
            raise ConfigurationError("PER slope and payload must be positive, preamble non-negative")

    @classmethod
    def from_dict(cls, data: dict | None) -> "PhyConfig":
        data = dict(data or {})
        if "thresholds" in data:
            data["thresholds"] = tuple(float(t) for t in data["thresholds"])
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"Unknown phy settings: {', '.join(sorted(unknown))}")
        return cls(**data)


@dataclass(frozen=True)
class TransmissionRecord:
    frame_index: int
    mcs: McsIndex
    success: bool
    payload_bits: int
    airtime: float


DEFAULT_PHY = PhyConfig()


def check_mcs(index: int) -> McsIndex:
    if not 0 <= index < N_MCS:
        raise ValueError(f"MCS index must be in 0..{N_MCS - 1}, got {index}")
    return int(index)


@functools.lru_cache(maxsize=None)
def mcs_table(config: PhyConfig = DEFAULT_PHY) -> tuple[McsEntry, ...]:
    """The eight 20 MHz rates: 48 data subcarriers x bits x code rate per 4 us symbol."""
    table = []
    for i, (modulation, rate) in enumerate(_RATE_SET):
        bits = modulation.bits_per_symbol
        data_rate = DATA_SUBCARRIERS * bits * float(rate) / SYMBOL_TIME / 1e6
        table.append(McsEntry(i, modulation, rate, bits, data_rate, config.thresholds[i]))
    return tuple(table)


def airtime(mcs: McsIndex, payload_bits: int, config: PhyConfig = DEFAULT_PHY) -> float:
    return config.preamble + payload_bits / (mcs_table(config)[mcs].data_rate * 1e6)


def subcarrier_snr(
    channel: ChannelState,
    tx_power: float = TX_POWER_DBM,
    noise_floor: float = NOISE_FLOOR_DBM,
) -> np.ndarray:
    """Per-subcarrier SNR in dB; a zero-magnitude subcarrier reads -inf."""
    return snr_db_from_csi(channel.csi, tx_power, noise_floor)


def snr_db_from_csi(csi: np.ndarray, tx_power: float, noise_floor: float) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return tx_power + 20.0 * np.log10(np.abs(csi)) - noise_floor


def _ber_coefficients(modulation: Modulation) -> tuple[float, float]:
    """BER = c * Q(sqrt(alpha * snr)) for Gray-coded AWGN detection."""
    if modulation is Modulation.BPSK:
        return 1.0, 2.0
    if modulation is Modulation.QPSK:
        return 1.0, 1.0
    m = modulation.value
    return (4.0 / math.log2(m)) * (1.0 - 1.0 / math.sqrt(m)), 3.0 / (m - 1)


def effective_snr_db(snr_db: np.ndarray, modulation: Modulation) -> np.ndarray:
    """
    Effective SNR over the last axis: average the uncoded BER across
    subcarriers and invert the same BER curve.

    Works in the log domain (log Q via log_ndtr) so neither very high nor
    very low SNR underflows.
    """
    c, alpha = _ber_coefficients(modulation)
    snr_db = np.asarray(snr_db, dtype=float)
    gamma = np.power(10.0, snr_db / 10.0)
    log_ber = math.log(c) + log_ndtr(-np.sqrt(alpha * gamma))
    log_avg = logsumexp(log_ber, axis=-1) - math.log(snr_db.shape[-1])
    x = np.maximum(-ndtri_exp(np.minimum(log_avg - math.log(c), math.log(0.5))), 0.0)
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(x * x / alpha)


def esnr(channel: ChannelState, mcs: McsIndex, config: PhyConfig = DEFAULT_PHY) -> float:
    """Effective SNR of the channel for the modulation of the given MCS, in dB."""
    modulation = mcs_table(config)[check_mcs(mcs)].modulation
    snr = subcarrier_snr(channel, config.tx_power, config.noise_floor)
    return float(effective_snr_db(snr, modulation))


def esnr_table(csi: np.ndarray, config: PhyConfig = DEFAULT_PHY) -> np.ndarray:
    """ESNR per MCS for a stack of CSI vectors: (..., N_sc) -> (..., 8)."""
    snr = snr_db_from_csi(np.asarray(csi), config.tx_power, config.noise_floor)
    by_modulation = {m: effective_snr_db(snr, m) for m in Modulation}
    return np.stack([by_modulation[entry.modulation] for entry in mcs_table(config)], axis=-1)


def per_from_esnr(esnr_db, mcs, payload_bits: int, config: PhyConfig = DEFAULT_PHY):
    """Logistic PER at the reference payload, scaled to other payload sizes."""
    threshold = np.asarray(config.thresholds)[mcs]
    per_ref = expit(-config.slope * (np.asarray(esnr_db) - threshold))
    if payload_bits == REFERENCE_PAYLOAD_BITS:
        return per_ref
    return 1.0 - (1.0 - per_ref) ** (payload_bits / REFERENCE_PAYLOAD_BITS)


def per(
    mcs: McsIndex,
    channel: ChannelState,
    payload_bits: int = REFERENCE_PAYLOAD_BITS,
    config: PhyConfig = DEFAULT_PHY,
) -> float:
    if payload_bits <= 0:
        raise ValueError(f"payload_bits must be positive, got {payload_bits}")
    return float(per_from_esnr(esnr(channel, mcs, config), check_mcs(mcs), payload_bits, config))


def per_table(csi: np.ndarray, payload_bits: int, config: PhyConfig = DEFAULT_PHY) -> np.ndarray:
    """PER of every MCS for a stack of CSI vectors: (..., N_sc) -> (..., 8)."""
    return per_from_esnr(esnr_table(csi, config), np.arange(N_MCS), payload_bits, config)


def transmit(
    per_value: float,
    draw: float,
    mcs: McsIndex,
    payload_bits: int,
    frame_index: int = 0,
    config: PhyConfig = DEFAULT_PHY,
) -> TransmissionRecord:
    """Resolve one frame against a uniform draw in [0, 1): success iff draw < 1 - PER."""
    return TransmissionRecord(
        frame_index=frame_index,
        mcs=mcs,
        success=bool(draw < 1.0 - per_value),
        payload_bits=payload_bits,
        airtime=airtime(mcs, payload_bits, config),
    )


def simulate_tx(
    mcs: McsIndex,
    channel: ChannelState,
    payload_bits: int,
    rng: np.random.Generator,
    config: PhyConfig = DEFAULT_PHY,
    frame_index: int = 0,
) -> TransmissionRecord:
    p = per(mcs, channel, payload_bits, config)
    return transmit(p, rng.random(), mcs, payload_bits, frame_index, config)


def one_hot(index: McsIndex) -> np.ndarray:
    label = np.zeros(N_MCS)
    label[check_mcs(index)] = 1.0
    return label


def best_feasible(per_row: np.ndarray, per_target: float = DEFAULT_PHY.per_target) -> np.ndarray:
    """Highest MCS with PER below target along the last axis, 0 when none qualifies."""
    feasible = np.asarray(per_row) < per_target
    highest = N_MCS - 1 - np.argmax(feasible[..., ::-1], axis=-1)
    return np.where(feasible.any(axis=-1), highest, 0)


def optimal_mcs(channel: ChannelState, config: PhyConfig = DEFAULT_PHY) -> tuple[McsIndex, np.ndarray]:
    """The label rule: highest MCS whose loss rate is below 10%, with its one-hot label."""
    pers = per_table(channel.csi, config.payload_bits, config)
    index = int(best_feasible(pers, config.per_target))
    return index, one_hot(index)


def throughput(records: Sequence[TransmissionRecord]) -> float:
    """Goodput in Mbps; failed frames score zero and are not retransmitted."""
    if not records:
        raise ValueError("throughput() needs at least one transmission record")
    delivered = sum(r.payload_bits for r in records if r.success)
    total_airtime = sum(r.airtime for r in records)
    return delivered / total_airtime / 1e6
