"""Training prober - decides when online fine-tuning starts"""
import logging
import math
from collections import deque
from dataclasses import dataclass, field

from sources.base import ChannelState, ConfigurationError, FlightState

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ProberConfig:
    """
    Attributes:
        distance_threshold: Meters from takeoff beyond which the UAV counts as somewhere new.
        window: Number of recent correctness bits in the accuracy window (K).
        accuracy_threshold: Windowed accuracy below which predictions count as degraded.
        cooldown: Frames after a trigger during which no new trigger fires.
        buffer_capacity: Most recent (channel, flight) samples kept for fine-tuning.
        require_both: AND of the two signals when true, OR when false.
    """
    distance_threshold: float = 50.0
    window: int = 100
    accuracy_threshold: float = 0.7
    cooldown: int = 1000
    buffer_capacity: int = 2000
    require_both: bool = True

    def __post_init__(self):
        if not 0.0 < self.accuracy_threshold <= 1.0:
            raise ConfigurationError(f"accuracy_threshold must be in (0, 1], got {self.accuracy_threshold}")
        if self.window < 1 or self.buffer_capacity < 1 or self.cooldown < 0:
            raise ConfigurationError("Prober window and buffer capacity must be positive, cooldown non-negative")

    @classmethod
    def from_dict(cls, data: dict | None) -> "ProberConfig":
        data = dict(data or {})
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"Unknown prober settings: {', '.join(sorted(unknown))}")
        return cls(**data)


@dataclass
class ProberState:
    takeoff_position: tuple[float, float, float]
    config: ProberConfig = field(default_factory=ProberConfig)
    accuracy_window: deque = field(init=False)
    buffer: deque = field(init=False)
    cooldown: int = 0
    triggers: int = 0

    def __post_init__(self):
        self.accuracy_window = deque(maxlen=self.config.window)
        self.buffer = deque(maxlen=self.config.buffer_capacity)

    @property
    def windowed_accuracy(self) -> float | None:
        if not self.accuracy_window:
            return None
        return sum(self.accuracy_window) / len(self.accuracy_window)

    def distance(self, flight: FlightState) -> float:
        return math.dist(flight.position, self.takeoff_position)


def prober_step(
    state: ProberState,
    flight: FlightState,
    prediction_correct: bool,
    channel: ChannelState | None = None,
) -> tuple[ProberState, bool]:
    """
    Record one frame and decide whether to trigger fine-tuning.

    The state is single-owner and updated in place. No trigger fires until the
    accuracy window holds K bits, or while the cooldown is running.
    """
    config = state.config
    state.accuracy_window.append(bool(prediction_correct))
    state.buffer.append((channel, flight))

    if state.cooldown > 0:
        state.cooldown -= 1
        return state, False
    if len(state.accuracy_window) < config.window:
        return state, False

    far = state.distance(flight) > config.distance_threshold
    degraded = state.windowed_accuracy < config.accuracy_threshold
    trigger = (far and degraded) if config.require_both else (far or degraded)
    if trigger:
        state.cooldown = config.cooldown
        state.triggers += 1
        logger.info(
            f"Prober: triggered at {state.distance(flight):.1f} m from takeoff, "
            f"windowed accuracy {state.windowed_accuracy:.2f}"
        )
    return state, trigger
