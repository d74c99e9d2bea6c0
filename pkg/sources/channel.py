"""Air-to-ground OFDM channel - path loss, Doppler-correlated Rician taps, per-subcarrier CSI"""
import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import j0

from sources.base import (
    VELOCITY_BINS,
    ChannelState,
    ConfigurationError,
    EnvironmentSpec,
    velocity_bin,
)

logger = logging.getLogger(__name__)

SPEED_OF_LIGHT = 3e8
DEFAULT_CARRIER = 2.4e9
SUBCARRIER_SPACING = 312.5e3
SUBCARRIER_INDICES = np.r_[-26:0, 1:27]
REFERENCE_DISTANCE = 1.0
TX_POWER_DBM = 20.0
NOISE_FLOOR_DBM = -90.0
RSSI_FLOOR_DBM = -200.0
DEFAULT_EST_NOISE_SIGMA = 0.08

PRESETS = {
    "square": EnvironmentSpec("square", 2.0, 60.0, 2.0, 10.0, 2, 100e-9),
    "playground": EnvironmentSpec("playground", 2.2, 58.0, 3.0, 8.0, 3, 200e-9),
    "pool": EnvironmentSpec("pool", 2.5, 57.0, 3.0, 6.0, 3, 250e-9),
    "grove": EnvironmentSpec("grove", 2.7, 55.0, 4.0, 3.0, 5, 400e-9),
}


@dataclass(frozen=True)
class FadingState:
    """
    Small-scale fading and shadowing carried from frame to frame.

    Attributes:
        scattered: Complex scattered amplitude of every tap.
        los: Fixed line-of-sight mean of every tap (only the first tap is non-zero).
        shadowing: Current shadowing in dB.
        rng_state: PCG64 state dict; evolving restores it so old states stay reusable.
    """
    scattered: np.ndarray
    los: np.ndarray
    shadowing: float
    rng_state: dict | None

    @property
    def taps(self) -> np.ndarray:
        return self.los + self.scattered

    @classmethod
    def from_taps(cls, taps, shadowing: float = 0.0, seed: int = 0) -> "FadingState":
        """Fixed tap amplitudes with no LOS split, mostly for hand-built channels."""
        taps = np.asarray(taps, dtype=complex)
        return cls(taps, np.zeros_like(taps), shadowing, np.random.default_rng(seed).bit_generator.state)


def environment_preset(name: str) -> EnvironmentSpec:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigurationError(
            f"Unknown environment preset: {name} (choose from {', '.join(PRESETS)})"
        ) from None


def coherence_time(v: float, f_c: float = DEFAULT_CARRIER) -> float:
    """
    Coherence time T_m = 0.423 / f_m with f_m = v * f_c / c.

    Returns math.inf for a stationary UAV.
    """
    if v < 0:
        raise ValueError(f"Velocity must be non-negative, got {v}")
    if not f_c > 0:
        raise ValueError(f"Carrier frequency must be positive, got {f_c}")
    if v == 0:
        return math.inf
    return 0.423 * SPEED_OF_LIGHT / (v * f_c)


def reciprocity_valid(frame_gap: float, v: float, f_c: float = DEFAULT_CARRIER) -> bool:
    """True when the ACK arrives within the coherence time, so its CSI describes the forward link."""
    if frame_gap < 0:
        raise ValueError(f"Frame gap must be non-negative, got {frame_gap}")
    return frame_gap < coherence_time(v, f_c)


def path_loss_db(env: EnvironmentSpec, d: float) -> float:
    """Log-distance path loss; shadowing is carried by FadingState instead."""
    if d < REFERENCE_DISTANCE:
        logger.warning(f"Channel: distance {d:.3f} m below reference distance, clamped to {REFERENCE_DISTANCE} m")
        d = REFERENCE_DISTANCE
    return env.pl0 + 10.0 * env.path_loss_exponent * math.log10(d / REFERENCE_DISTANCE)


def tap_delays(env: EnvironmentSpec) -> np.ndarray:
    return np.linspace(0.0, env.tap_delay_spread, env.n_taps)


def tap_powers(env: EnvironmentSpec) -> np.ndarray:
    """Exponential power-delay profile, 10 dB down at the last tap, summing to 1."""
    if env.n_taps == 1:
        return np.ones(1)
    pdp_db = -10.0 * np.arange(env.n_taps) / (env.n_taps - 1)
    powers = 10 ** (pdp_db / 10)
    return powers / powers.sum()


def _rician_split(env: EnvironmentSpec) -> tuple[np.ndarray, np.ndarray]:
    """
    LOS amplitudes and scattered standard deviations per tap.

    rician_k is the total K-factor: the first tap carries the LOS power
    K / (K + 1), and the scattered power 1 / (K + 1) follows the delay profile.
    """
    powers = tap_powers(env)
    los = np.zeros(env.n_taps)
    if math.isinf(env.rician_k) and env.rician_k > 0:
        los[0] = 1.0
        return los, np.zeros(env.n_taps)
    k = 10 ** (env.rician_k / 10)
    los[0] = math.sqrt(k / (k + 1))
    return los, np.sqrt(powers / (k + 1))


def _complex_normal(rng: np.random.Generator, size) -> np.ndarray:
    return (rng.normal(size=size) + 1j * rng.normal(size=size)) / math.sqrt(2)


def init_fading(env: EnvironmentSpec, seed: int) -> FadingState:
    """Fresh fading state with unit expected total tap power."""
    rng = np.random.default_rng(seed)
    los, std = _rician_split(env)
    scattered = std * _complex_normal(rng, env.n_taps)
    shadowing = env.shadowing_sigma * rng.normal()
    return FadingState(scattered, los.astype(complex), float(shadowing), rng.bit_generator.state)


def _restore_rng(rng_state: dict | None) -> np.random.Generator:
    rng = np.random.Generator(np.random.PCG64())
    if rng_state is not None:
        rng.bit_generator.state = rng_state
    return rng


def evolve_fading(
    state: FadingState,
    dt: float,
    v: float,
    f_c: float,
    env: EnvironmentSpec,
) -> FadingState:
    """
    Advance the fading state by dt seconds at speed v.

    Scattered taps follow a first-order Gauss-Markov process whose lag
    correlation is the Clarke autocorrelation J0(2*pi*f_m*dt). Shadowing
    follows an AR(1) over travelled distance.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if v < 0:
        raise ValueError(f"Velocity must be non-negative, got {v}")

    rng = _restore_rng(state.rng_state)
    _, std = _rician_split(env)

    f_m = v * f_c / SPEED_OF_LIGHT
    rho = float(j0(2 * math.pi * f_m * dt))
    innovation = math.sqrt(max(1.0 - rho * rho, 0.0))
    scattered = rho * state.scattered + innovation * std * _complex_normal(rng, env.n_taps)

    rho_s = math.exp(-v * dt / env.shadow_decorrelation)
    shadowing = rho_s * state.shadowing + math.sqrt(1.0 - rho_s * rho_s) * env.shadowing_sigma * rng.normal()

    return FadingState(scattered, state.los, float(shadowing), rng.bit_generator.state)


def frequency_response(taps: np.ndarray, delays: np.ndarray) -> np.ndarray:
    """DFT of the tap profile on the OFDM subcarrier grid."""
    phase = -2j * math.pi * np.outer(delays, SUBCARRIER_INDICES * SUBCARRIER_SPACING)
    return taps @ np.exp(phase)


def rssi_dbm(csi: np.ndarray, tx_power: float = TX_POWER_DBM) -> float:
    power = float(np.mean(np.abs(csi) ** 2))
    if power <= 0:
        return RSSI_FLOOR_DBM
    return max(tx_power + 10.0 * math.log10(power), RSSI_FLOOR_DBM)


def add_estimation_noise(channel: ChannelState, sigma: float, rng: np.random.Generator) -> ChannelState:
    """Additive complex Gaussian estimation error, per-component std sigma * mean(|csi|)."""
    if sigma <= 0:
        return channel
    scale = sigma * float(np.mean(np.abs(channel.csi)))
    size = channel.csi.shape
    noisy = channel.csi + scale * (rng.normal(size=size) + 1j * rng.normal(size=size))
    return ChannelState(csi=noisy, rssi=channel.rssi, timestamp=channel.timestamp)


def render_csi(
    state: FadingState,
    env: EnvironmentSpec,
    d: float,
    est_noise_sigma: float = DEFAULT_EST_NOISE_SIGMA,
    rng: np.random.Generator | None = None,
    tx_power: float = TX_POWER_DBM,
    timestamp: float = 0.0,
) -> ChannelState:
    """
    Render the fading state to per-subcarrier CSI at distance d.

    RSSI always comes from the noiseless CSI; estimation noise only touches csi.
    """
    if len(state.scattered) != env.n_taps:
        raise ConfigurationError(
            f"Fading state has {len(state.scattered)} taps, environment {env.name} expects {env.n_taps}"
        )
    gain = 10 ** (-(path_loss_db(env, d) + state.shadowing) / 20)
    csi = frequency_response(state.taps, tap_delays(env)) * gain
    clean = ChannelState(csi=csi, rssi=rssi_dbm(csi, tx_power), timestamp=timestamp)
    if est_noise_sigma > 0:
        return add_estimation_noise(clean, est_noise_sigma, rng or _restore_rng(state.rng_state))
    return clean


def csi_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Normalized inner product magnitude of two CSI vectors."""
    denom = np.linalg.norm(a) * np.linalg.norm(b)
    if denom == 0:
        return 0.0
    return float(abs(np.vdot(a, b)) / denom)


def rssi_difference_stats(
    channels: Sequence[ChannelState],
    speeds: Sequence[float],
) -> dict[str, dict[str, float]]:
    """
    Adjacent-frame |delta RSSI| and CSI similarity grouped by velocity bin.

    Frame n's difference is attributed to the bin of speeds[n]. Bins with no
    frames are left out.
    """
    if len(channels) != len(speeds):
        raise ValueError("channels and speeds must have the same length")

    grouped: dict[str, dict[str, list[float]]] = {}
    for n in range(1, len(channels)):
        label = velocity_bin(speeds[n])
        entry = grouped.setdefault(label, {"delta": [], "similarity": []})
        entry["delta"].append(abs(channels[n].rssi - channels[n - 1].rssi))
        entry["similarity"].append(csi_similarity(channels[n].csi, channels[n - 1].csi))

    stats = {}
    for label, _, _ in VELOCITY_BINS:
        if label in grouped:
            deltas = np.array(grouped[label]["delta"])
            stats[label] = {
                "frames": float(len(deltas)),
                "mean_abs_delta": float(deltas.mean()),
                "max_abs_delta": float(deltas.max()),
                "csi_similarity": float(np.mean(grouped[label]["similarity"])),
            }
    return stats
