"""Flight simulator - seeded UAV trajectories and the decimated sensor stream"""
import logging
import math
from typing import NamedTuple, Sequence

import numpy as np
from scipy.linalg import expm

from sources.base import ConfigurationError, FlightState, SensorNoiseSpec, TrajectorySpec

logger = logging.getLogger(__name__)

DEFAULT_DT = 1e-3
DEFAULT_SENSOR_RATE = 50.0


class Kinematics(NamedTuple):
    """Columnar view of a state series."""
    t: np.ndarray
    position: np.ndarray
    d: np.ndarray
    v: np.ndarray
    a: np.ndarray


def generate_trajectory(spec: TrajectorySpec, dt: float = DEFAULT_DT) -> list[FlightState]:
    """
    Generate ceil(duration/dt) flight states for the given spec.

    The receiver is at the origin on the ground. Identical (spec, dt) always
    produce identical output since every draw comes from spec.seed.
    """
    if not dt > 0 or dt > spec.duration:
        raise ConfigurationError(f"dt must satisfy 0 < dt <= duration, got dt={dt}")

    n = math.ceil(spec.duration / dt - 1e-9)
    rng = np.random.default_rng(spec.seed)

    builders = {
        "hover": _hover,
        "constant_velocity": _constant_velocity,
        "variable_back_and_forth": _back_and_forth,
        "random": _random_flight,
    }
    positions, velocities, accelerations = builders[spec.kind](spec, dt, n, rng)
    logger.debug(f"Flightsim: Generated {n} states for {spec.kind} trajectory (seed {spec.seed})")
    return _to_states(positions, velocities, accelerations, dt)


def _drift_transition(tau: float, zeta: float, dt: float) -> tuple[np.ndarray, np.ndarray, float]:
    """
    Exact one-step transition of the per-axis drift state (offset, velocity).

    The drift is a second-order Ornstein-Uhlenbeck process with natural
    frequency 1/tau and damping zeta. Returns the transition matrix, a factor
    of the step noise covariance for unit stationary offset, and the
    velocity scale 1/tau.
    """
    omega = 1.0 / tau
    drift = np.array([[0.0, 1.0], [-omega ** 2, -2 * zeta * omega]])
    transition = expm(drift * dt)
    stationary = np.diag([1.0, omega ** 2])
    step_cov = stationary - transition @ stationary @ transition.T
    w, vecs = np.linalg.eigh((step_cov + step_cov.T) / 2)
    return transition, vecs * np.sqrt(np.clip(w, 0.0, None)), omega


def _hover(spec, dt, n, rng):
    """Anchor plus a mean-reverting drift the flight controller keeps pulling back."""
    anchor = np.array([spec.params.get("anchor_distance", 10.0), 0.0, spec.height])
    sigma = spec.drift_sigma
    tau = spec.params.get("drift_tau", 1.0)
    zeta = spec.params.get("drift_damping", 0.7)
    if not tau > 0 or not zeta > 0:
        raise ConfigurationError(f"Hover drift_tau and drift_damping must be positive, got {tau} and {zeta}")

    transition, noise, omega = _drift_transition(tau, zeta, dt)
    # Rows are (offset, velocity), columns the three axes; started from the stationary law
    x = sigma * np.array([[1.0], [omega]]) * rng.normal(size=(2, 3))
    kicks = sigma * rng.normal(size=(n, 2, 3))

    positions = np.empty((n, 3))
    velocities = np.empty((n, 3))
    accelerations = np.empty((n, 3))
    for i in range(n):
        positions[i] = anchor + x[0]
        velocities[i] = x[1]
        accelerations[i] = -omega ** 2 * x[0] - 2 * zeta * omega * x[1]
        x = transition @ x + noise @ kicks[i]
    return positions, velocities, accelerations


def _constant_velocity(spec, dt, n, rng):
    start = spec.params.get("start_distance", 5.0)
    speed = spec.params.get("speed", 5.0)
    cap = spec.params.get("speed_cap", math.inf)
    if speed < 0 or speed > cap:
        raise ConfigurationError(f"Cruise speed {speed} m/s outside [0, {cap}]")

    t = np.arange(n) * dt
    positions = np.zeros((n, 3))
    positions[:, 0] = start + speed * t
    positions[:, 2] = spec.height
    velocities = np.zeros((n, 3))
    velocities[:, 0] = speed
    return positions, velocities, np.zeros((n, 3))


def _back_and_forth(spec, dt, n, rng):
    center = spec.params.get("center_distance", 30.0)
    amplitude = spec.params.get("amplitude", 20.0)
    period = spec.params.get("period", 20.0)
    cap = spec.params.get("speed_cap", 10.0)
    w = 2 * math.pi / period
    if amplitude * w > cap:
        raise ConfigurationError(
            f"Back-and-forth peak speed {amplitude * w:.2f} m/s exceeds the {cap} m/s cap"
        )

    t = np.arange(n) * dt
    positions = np.zeros((n, 3))
    positions[:, 0] = center + amplitude * np.sin(w * t)
    positions[:, 2] = spec.height
    velocities = np.zeros((n, 3))
    velocities[:, 0] = amplitude * w * np.cos(w * t)
    accelerations = np.zeros((n, 3))
    accelerations[:, 0] = -amplitude * w ** 2 * np.sin(w * t)
    return positions, velocities, accelerations


def _random_flight(spec, dt, n, rng):
    """Piecewise-constant-acceleration segments with random headings, re-drawn every 1-3 s."""
    cap = spec.params.get("speed_cap", 10.0)
    radius = spec.params.get("radius", 60.0)
    seg_min = spec.params.get("segment_min", 1.0)
    seg_max = spec.params.get("segment_max", 3.0)

    p = np.array([spec.params.get("start_distance", 10.0), 0.0, spec.height])
    u = np.zeros(3)

    positions = np.empty((n, 3))
    velocities = np.empty((n, 3))
    accelerations = np.empty((n, 3))
    i = 0
    while i < n:
        seg_len = rng.uniform(seg_min, seg_max)
        speed = rng.uniform(0.0, cap)
        heading = rng.uniform(0.0, 2 * math.pi)
        if math.hypot(p[0], p[1]) > radius:
            # Steer back towards the receiver
            heading = math.atan2(-p[1], -p[0]) + rng.uniform(-math.pi / 4, math.pi / 4)
        target = np.array([speed * math.cos(heading), speed * math.sin(heading), 0.0])
        acc = (target - u) / seg_len

        for _ in range(max(1, round(seg_len / dt))):
            if i >= n:
                break
            positions[i] = p
            velocities[i] = u
            accelerations[i] = acc
            p = p + u * dt + 0.5 * acc * dt ** 2
            u = u + acc * dt
            norm = np.linalg.norm(u)
            if norm > cap:
                u = u * (cap / norm)
            i += 1
    return positions, velocities, accelerations


def _to_states(positions, velocities, accelerations, dt) -> list[FlightState]:
    d = np.linalg.norm(positions, axis=1)
    v = np.linalg.norm(velocities, axis=1)
    a = np.linalg.norm(accelerations, axis=1)
    return [
        FlightState(
            timestamp=i * dt,
            position=(float(positions[i, 0]), float(positions[i, 1]), float(positions[i, 2])),
            d=float(d[i]),
            v=float(v[i]),
            a=float(a[i]),
        )
        for i in range(len(positions))
    ]


def kinematics(states: Sequence[FlightState]) -> Kinematics:
    """Stack a state series into arrays."""
    return Kinematics(
        t=np.array([s.timestamp for s in states], dtype=float),
        position=np.array([s.position for s in states], dtype=float).reshape(-1, 3),
        d=np.array([s.d for s in states], dtype=float),
        v=np.array([s.v for s in states], dtype=float),
        a=np.array([s.a for s in states], dtype=float),
    )


def sample_sensors(
    states: Sequence[FlightState],
    sensor_rate: float = DEFAULT_SENSOR_RATE,
    noise: SensorNoiseSpec | None = None,
) -> list[FlightState]:
    """
    Decimate a state series to the sensor rate and add Gaussian noise to d, v and a.

    Timestamps and positions are kept from the source states. Noisy values are
    clamped at zero so the non-negativity invariants still hold.
    """
    if not states:
        return []
    if not sensor_rate > 0:
        raise ConfigurationError(f"sensor_rate must be positive, got {sensor_rate}")

    noise = noise or SensorNoiseSpec(0.0, 0.0, 0.0)
    if len(states) > 1:
        dt = states[1].timestamp - states[0].timestamp
        if sensor_rate > (1.0 / dt) * (1 + 1e-9):
            raise ConfigurationError(
                f"sensor_rate {sensor_rate} Hz exceeds the state rate {1.0 / dt:.3f} Hz"
            )
        step = max(1, round(1.0 / (sensor_rate * dt)))
    else:
        step = 1

    picked = list(states[::step])
    rng = np.random.default_rng(noise.seed)
    eps = rng.normal(0.0, 1.0, (len(picked), 3))

    return [
        FlightState(
            timestamp=s.timestamp,
            position=s.position,
            d=max(s.d + noise.sigma_d * e[0], 0.0),
            v=max(s.v + noise.sigma_v * e[1], 0.0),
            a=max(s.a + noise.sigma_a * e[2], 0.0),
        )
        for s, e in zip(picked, eps)
    ]
