"""SampleRate - send at the rate with the lowest expected transmission time, sampling a faster-looking rate every tenth frame"""
import logging
import math
from dataclasses import dataclass

import numpy as np

from adapters.base import AdapterObservation
from phy.link import DEFAULT_PHY, N_MCS, McsIndex, PhyConfig, TransmissionRecord, airtime
from sources.base import ConfigurationError

logger = logging.getLogger(__name__)

SAMPLING_POLICIES = ("faster", "uniform")


@dataclass(frozen=True)
class SampleRateConfig:
    """
    Attributes:
        decay: EWMA decay of the per-rate estimates at rest (window 1 / (1 - decay) frames).
        sample_interval: Every sample_interval-th frame tries a random candidate rate.
        sampling_policy: "faster" samples only rates whose lossless airtime beats the
            best rate's expected time; "uniform" samples any non-current rate.
        failure_penalty: A failed frame costs this many times its airtime.
        min_window: Smallest averaging window of the velocity-scaled variant.
        seed: Seed of the sampling draws.
    """
    decay: float = 0.95
    sample_interval: int = 10
    sampling_policy: str = "faster"
    failure_penalty: float = 4.0
    min_window: float = 4.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.decay < 1.0:
            raise ConfigurationError(f"SampleRate decay must be in (0, 1), got {self.decay}")
        if self.sample_interval < 2 or self.failure_penalty < 1.0:
            raise ConfigurationError("SampleRate sample_interval must be >= 2 and failure_penalty >= 1")
        if self.sampling_policy not in SAMPLING_POLICIES:
            raise ConfigurationError(f"Unknown SampleRate sampling_policy: {self.sampling_policy}")


class SampleRateAdapter:
    """
    Per rate, EWMAs of the airtime spent per attempt (failures weighted by the
    penalty) and of the delivery ratio; their ratio is the expected time to
    deliver one frame. A rate that keeps failing drifts to infinity and is
    never picked as best.

    The dynamic variant shrinks the averaging window with speed:
    W(v) = clamp(W0 / (1 + v/2), min_window, W0) with W0 = 1 / (1 - decay).
    With the default "faster" policy, sampling candidates are the rates whose
    lossless airtime is below the best rate's expected time, so a best rate
    that never fails is never sampled away from. The "uniform" policy samples
    every other rate with equal odds. SampleRate never looks at CSI.
    """

    def __init__(
        self,
        config: SampleRateConfig = SampleRateConfig(),
        dynamic: bool = False,
        name: str | None = None,
        phy: PhyConfig = DEFAULT_PHY,
    ):
        self.config = config
        self.dynamic = dynamic
        self.name = name or ("dynamic_samplerate" if dynamic else "samplerate")
        self.attempt_time = np.full(N_MCS, np.nan)
        self.delivery = np.full(N_MCS, np.nan)
        self.best: McsIndex = 0
        self.rng = np.random.default_rng(config.seed)
        self.lossless = np.array([airtime(r, phy.payload_bits, phy) for r in range(N_MCS)])

    def window(self, v: float = 0.0) -> float:
        base = 1.0 / (1.0 - self.config.decay)
        return min(max(base / (1.0 + v / 2.0), self.config.min_window), base)

    def expected_time(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            t = self.attempt_time / self.delivery
        t[self.delivery == 0] = math.inf
        return t

    def update(self, record: TransmissionRecord, v: float = 0.0):
        alpha = 1.0 / self.window(v if self.dynamic else 0.0)
        cost = record.airtime if record.success else record.airtime * self.config.failure_penalty
        delivered = 1.0 if record.success else 0.0
        r = record.mcs
        if np.isnan(self.attempt_time[r]):
            self.attempt_time[r], self.delivery[r] = cost, delivered
        else:
            self.attempt_time[r] = (1 - alpha) * self.attempt_time[r] + alpha * cost
            self.delivery[r] = (1 - alpha) * self.delivery[r] + alpha * delivered

        times = self.expected_time()
        known = ~np.isnan(times)
        if known.any():
            self.best = int(np.argmin(np.where(known, times, math.inf)))

    def candidates(self) -> list[McsIndex]:
        if self.config.sampling_policy == "uniform":
            return [r for r in range(N_MCS) if r != self.best]
        reference = self.expected_time()[self.best]
        if np.isnan(reference):
            reference = math.inf
        return [r for r in range(N_MCS) if r != self.best and self.lossless[r] < reference]

    def choose(self, obs: AdapterObservation) -> McsIndex:
        v = obs.flight.v if (self.dynamic and obs.flight is not None) else 0.0
        if obs.record is not None:
            self.update(obs.record, v)

        n = obs.frame_index
        if n > 0 and n % self.config.sample_interval == 0:
            others = self.candidates()
            if others:
                return int(self.rng.choice(others))
        return self.best
