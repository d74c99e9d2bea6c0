"""Base definitions for trace sources - data contracts and protocols"""
import math
from dataclasses import dataclass, field
from typing import Iterator, Protocol

import numpy as np

N_SUBCARRIERS = 52
TRAJECTORY_KINDS = ("hover", "constant_velocity", "variable_back_and_forth", "random")

# (label, lower, upper) in m/s; the last bin is open so every frame lands somewhere
VELOCITY_BINS = (("0-2", 0.0, 2.0), ("2-6", 2.0, 6.0), ("6-10", 6.0, math.inf))


def velocity_bin(v: float) -> str:
    for label, lower, upper in VELOCITY_BINS:
        if lower <= v < upper:
            return label
    raise ValueError(f"Speed must be non-negative, got {v}")


class ConfigurationError(ValueError):
    """Raised for invalid specs, unknown kinds, shape mismatches and missing inputs."""


@dataclass(frozen=True)
class FlightState:
    """
    Motion state of the UAV at one instant.

    Attributes:
        timestamp: Seconds since the start of the flight.
        position: (x, y, z) in meters. The receiver sits at the origin on the ground.
        d: Distance to the receiver in meters.
        v: Speed magnitude in m/s.
        a: Acceleration magnitude in m/s^2.
    """
    timestamp: float
    position: tuple[float, float, float]
    d: float
    v: float
    a: float


@dataclass(frozen=True)
class ChannelState:
    """
    Channel measurement for one frame.

    Attributes:
        csi: Complex per-subcarrier gains (linear scale), length N_SUBCARRIERS.
        rssi: Received power in dBm, computed from the noiseless CSI.
        timestamp: Seconds since the start of the flight.
    """
    csi: np.ndarray
    rssi: float
    timestamp: float = 0.0


@dataclass(frozen=True)
class SensorNoiseSpec:
    """Additive Gaussian noise applied to sensor samples (GPS/IMU fusion error scale)."""
    sigma_v: float = 0.1
    sigma_a: float = 0.2
    sigma_d: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if min(self.sigma_v, self.sigma_a, self.sigma_d) < 0:
            raise ConfigurationError("Sensor noise sigmas must be non-negative")


@dataclass(frozen=True)
class TrajectorySpec:
    """
    Description of a flight to generate.

    Attributes:
        kind: hover, constant_velocity, variable_back_and_forth or random.
        duration: Flight length in seconds.
        height: Flight altitude in meters.
        params: Kind-specific values (anchor_distance, speed, start_distance,
            center_distance, amplitude, period, speed_cap, radius, segment_min,
            segment_max, and for hover drift_tau and drift_damping).
        drift_sigma: Hover drift scale in meters.
        seed: Seed for every random draw of this flight.
    """
    kind: str
    duration: float
    height: float
    params: dict[str, float] = field(default_factory=dict)
    drift_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in TRAJECTORY_KINDS:
            raise ConfigurationError(f"Unknown trajectory kind: {self.kind}")
        if not self.duration > 0:
            raise ConfigurationError(f"Trajectory duration must be positive, got {self.duration}")
        if not self.height > 0:
            raise ConfigurationError(f"Trajectory height must be positive, got {self.height}")
        if self.drift_sigma < 0:
            raise ConfigurationError(f"drift_sigma must be non-negative, got {self.drift_sigma}")

    @classmethod
    def from_dict(cls, data: dict) -> "TrajectorySpec":
        known = {"kind", "duration", "height", "drift_sigma", "seed"}
        params = dict(data.get("params", {}))
        params.update({k: v for k, v in data.items() if k not in known | {"params"}})
        try:
            return cls(
                kind=data["kind"],
                duration=float(data["duration"]),
                height=float(data["height"]),
                params={k: float(v) for k, v in params.items()},
                drift_sigma=float(data.get("drift_sigma", 0.0)),
                seed=int(data.get("seed", 0)),
            )
        except KeyError as e:
            raise ConfigurationError(f"Trajectory spec missing field {e}") from e


@dataclass(frozen=True)
class EnvironmentSpec:
    """
    Large- and small-scale propagation parameters of one flight site.

    Attributes:
        name: Site name (square, playground, pool, grove or custom).
        path_loss_exponent: Log-distance exponent, within [1.6, 4.0].
        pl0: Path loss in dB at the 1 m reference distance.
        shadowing_sigma: Log-normal shadowing standard deviation in dB.
        rician_k: Total Rician K-factor in dB, carried by the first tap (math.inf = pure LOS).
        n_taps: Number of multipath taps.
        tap_delay_spread: Maximum excess delay in seconds; taps are evenly spaced up to it.
        shadow_decorrelation: Distance in meters over which shadowing decorrelates to 1/e.
    """
    name: str
    path_loss_exponent: float
    pl0: float
    shadowing_sigma: float
    rician_k: float
    n_taps: int
    tap_delay_spread: float
    shadow_decorrelation: float = 20.0

    def __post_init__(self):
        if not 1.6 <= self.path_loss_exponent <= 4.0:
            raise ConfigurationError(
                f"Environment {self.name}: path_loss_exponent {self.path_loss_exponent} outside [1.6, 4.0]"
            )
        if self.n_taps < 1:
            raise ConfigurationError(f"Environment {self.name}: n_taps must be >= 1")
        if self.shadowing_sigma < 0:
            raise ConfigurationError(f"Environment {self.name}: shadowing_sigma must be >= 0")
        if self.tap_delay_spread < 0 or self.shadow_decorrelation <= 0:
            raise ConfigurationError(f"Environment {self.name}: invalid delay spread or decorrelation distance")
        if math.isnan(self.rician_k):
            raise ConfigurationError(f"Environment {self.name}: rician_k is NaN")

    @classmethod
    def from_dict(cls, data: dict) -> "EnvironmentSpec":
        try:
            return cls(
                name=str(data["name"]),
                path_loss_exponent=float(data["path_loss_exponent"]),
                pl0=float(data["pl0"]),
                shadowing_sigma=float(data["shadowing_sigma"]),
                rician_k=float(data["rician_k"]),
                n_taps=int(data["n_taps"]),
                tap_delay_spread=float(data["tap_delay_spread"]),
                shadow_decorrelation=float(data.get("shadow_decorrelation", 20.0)),
            )
        except KeyError as e:
            raise ConfigurationError(f"Environment spec missing field {e}") from e


class TraceSource(Protocol):
    """
    Protocol for anything that yields synchronized frames.

    Uses Protocol for duck typing - the simulated link in the harness and a
    trace replayed from disk both satisfy it without inheriting.
    """

    def frames(self) -> Iterator[tuple[ChannelState, FlightState]]:
        """Yield (measured channel, aligned sensor state) pairs in frame order."""
        ...


def recent_frames(source: TraceSource, capacity: int | None = None) -> list[tuple[ChannelState, FlightState]]:
    """The last `capacity` frames of a source (all of them without a capacity)."""
    frames = list(source.frames())
    return frames if capacity is None else frames[-capacity:]
