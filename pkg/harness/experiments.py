"""
Experiment designs.

Each experiment turns one base scenario into a family of scenarios (other
trajectories, environments or adapter sets), runs it over the given seeds
and returns reports that sinks.csv_report can export.
"""
import asyncio
import logging
from dataclasses import dataclass, replace
from typing import Awaitable, Callable, Sequence

import numpy as np

from harness.scenario import AdapterSpec, MetricsReport, ScenarioConfig, run_sweep, simulate_link
from sinks.checkpoint import Checkpoint
from sinks.csv_report import TabularReport
from sources.base import VELOCITY_BINS, ConfigurationError, TrajectorySpec
from sources.channel import environment_preset, rssi_difference_stats
from sources.sync import LabeledTrace, featurize_trace
from staterate.inference import evaluation_substitute, virtual_labels
from staterate.training import sequence_probs

logger = logging.getLogger(__name__)

BASELINE_KINDS = ("opt", "previous_opt", "samplerate", "dynamic_samplerate", "charm", "esnr", "dynamic_esnr")
SENSOR_HINT_KINDS = ("opt", "samplerate", "dynamic_samplerate", "esnr", "dynamic_esnr")
GENERALIZATION_KINDS = ("opt", "staterate_offline", "staterate", "staterate_retrained")
GENERALIZATION_ENVIRONMENTS = ("square", "pool", "grove")


def adapter_specs(kinds: Sequence[str]) -> tuple[AdapterSpec, ...]:
    return tuple(AdapterSpec(kind) for kind in kinds)


def _with_learned(kinds: Sequence[str], models: Checkpoint | None) -> tuple[AdapterSpec, ...]:
    return adapter_specs(tuple(kinds) + (("staterate",) if models is not None else ()))


def _trajectory(base: ScenarioConfig, kind: str, height: float, drift_sigma: float = 0.0, **params) -> TrajectorySpec:
    return TrajectorySpec(kind, base.duration, height, params, drift_sigma, base.trajectory.seed)


def trajectory_designs(base: ScenarioConfig) -> dict[str, TrajectorySpec]:
    """The three structured flights: hover at 25 m, cruise at 30 m, back and forth at 20 m."""
    return {
        "hover": _trajectory(base, "hover", 25.0, drift_sigma=1.0, anchor_distance=10.0),
        "constant_velocity": _trajectory(base, "constant_velocity", 30.0, start_distance=5.0, speed=5.0),
        "variable_back_and_forth": _trajectory(
            base, "variable_back_and_forth", 20.0, center_distance=30.0, amplitude=15.0, period=10.0
        ),
    }


async def _map_threads(fn, configs: Sequence[ScenarioConfig], workers: int) -> list:
    limit = asyncio.Semaphore(max(1, workers))

    async def run_one(config):
        async with limit:
            return await asyncio.to_thread(fn, config)

    return list(await asyncio.gather(*(run_one(c) for c in configs)))


async def _sweep(configs: list[ScenarioConfig], seeds: Sequence[int], models, workers) -> list[MetricsReport]:
    return await run_sweep([c.with_seed(s) for c in configs for s in seeds], models, workers)


async def overall(base, seeds, models=None, workers=4) -> list[TabularReport]:
    """Random flight, every adapter."""
    config = replace(
        base,
        name=f"{base.name}-overall",
        trajectory=_trajectory(base, "random", base.trajectory.height, speed_cap=10.0),
        adapters=_with_learned(BASELINE_KINDS, models),
    )
    return await _sweep([config], seeds, models, workers)


async def velocity_bins(base, seeds, models=None, workers=4) -> list[TabularReport]:
    """Back-and-forth flight sweeping 0 to 9.4 m/s so every velocity bin fills up."""
    config = replace(
        base,
        name=f"{base.name}-velocity",
        trajectory=trajectory_designs(base)["variable_back_and_forth"],
        adapters=_with_learned(BASELINE_KINDS, models),
    )
    return await _sweep([config], seeds, models, workers)


async def trajectories(base, seeds, models=None, workers=4) -> list[TabularReport]:
    configs = [
        replace(base, name=f"{base.name}-{kind}", trajectory=spec, adapters=_with_learned(BASELINE_KINDS, models))
        for kind, spec in trajectory_designs(base).items()
    ]
    return await _sweep(configs, seeds, models, workers)


async def sensor_hints(base, seeds, models=None, workers=4) -> list[TabularReport]:
    """Each rate adapter with and without the speed hint."""
    config = replace(base, name=f"{base.name}-sensors", adapters=_with_learned(SENSOR_HINT_KINDS, models))
    return await _sweep([config], seeds, models, workers)


async def environment_generalization(base, seeds, models=None, workers=4) -> list[TabularReport]:
    """Models trained elsewhere, deployed in new environments: offline only, online fine-tuned, retrained."""
    if models is None:
        raise ConfigurationError("environment_generalization needs a checkpoint")
    configs = [
        replace(
            base,
            name=f"{base.name}-{env}",
            environment=environment_preset(env),
            adapters=adapter_specs(GENERALIZATION_KINDS),
        )
        for env in GENERALIZATION_ENVIRONMENTS
    ]
    return await _sweep(configs, seeds, models, workers)


@dataclass(frozen=True)
class AccuracyReport:
    """Agreement of each virtual-label source with the optimal-MCS labels, per velocity bin."""
    scenario: str
    seed: int
    accuracy: dict[str, dict[str, float]]

    def to_rows(self) -> list[tuple]:
        return [
            (self.scenario, self.seed, source, "evaluation_accuracy", label, value)
            for source, bins in self.accuracy.items()
            for label, value in bins.items()
        ]

    def mean_over_bins(self, source: str) -> float:
        bins = [v for k, v in self.accuracy[source].items() if k != "all"]
        return float(np.mean(bins)) if bins else 0.0


def binned_accuracy(choices: np.ndarray, labels: np.ndarray, speeds: np.ndarray) -> dict[str, float]:
    accuracy = {"all": float(np.mean(choices == labels))}
    for label, lower, upper in VELOCITY_BINS:
        mask = (speeds >= lower) & (speeds < upper)
        if mask.any():
            accuracy[label] = float(np.mean(choices[mask] == labels[mask]))
    return accuracy


def evaluation_agreement(config: ScenarioConfig, models: Checkpoint) -> AccuracyReport:
    link = simulate_link(config)
    channels = [s.channel for s in link.trace.samples]
    sources = {
        "network": models.evaluation,
        "snr": evaluation_substitute("snr", config.phy),
        "esnr": evaluation_substitute("esnr", config.phy),
    }
    accuracy = {
        name: binned_accuracy(
            virtual_labels(source, channels, models.standardizer).argmax(axis=1), link.labels, link.speeds
        )
        for name, source in sources.items()
    }
    return AccuracyReport(config.name, config.seed, accuracy)


async def evaluation_accuracy(base, seeds, models=None, workers=4) -> list[TabularReport]:
    """Evaluation network against the SNR and ESNR threshold rules."""
    if models is None:
        raise ConfigurationError("evaluation_accuracy needs a checkpoint")
    config = replace(base, name=f"{base.name}-evaluation", trajectory=trajectory_designs(base)["variable_back_and_forth"])
    return await _map_threads(lambda c: evaluation_agreement(c, models), [config.with_seed(s) for s in seeds], workers)


def prediction_agreement(prediction, trace: LabeledTrace, standardizer) -> float:
    """Share of frames where the prediction for n + 1 made at n matches the optimal MCS of n + 1."""
    planes, states, labels = featurize_trace(trace, standardizer)
    if len(labels) < 2:
        return 0.0
    probs = sequence_probs(prediction, planes[:-1], states[:-1])
    return float(np.mean(probs.argmax(axis=1) == labels[1:]))


@dataclass(frozen=True)
class ChannelReport:
    """Adjacent-frame RSSI change and CSI similarity per velocity bin, for one flight design."""
    scenario: str
    seed: int
    flight: str
    stats: dict[str, dict[str, float]]

    def to_rows(self) -> list[tuple]:
        return [
            (self.scenario, self.seed, self.flight, metric, label, values[metric])
            for label, values in self.stats.items()
            for metric in ("mean_abs_delta", "max_abs_delta", "csi_similarity")
        ]


# The measurement receiver logs one channel trace every 5 ms, in the multipath-rich grove
OBSERVATION_FRAME_RATE = 200.0
OBSERVATION_ENVIRONMENT = "grove"


def channel_designs(base: ScenarioConfig) -> dict[str, TrajectorySpec]:
    """Grounded (no motion) and hovering with drift about 15 m out, and a flight covering every velocity bin."""
    return {
        "grounded": _trajectory(base, "hover", 1.0, drift_sigma=0.0, anchor_distance=15.0),
        "hover": _trajectory(base, "hover", 11.0, drift_sigma=2.5, anchor_distance=10.0),
        "flight": trajectory_designs(base)["variable_back_and_forth"],
    }


def observation_config(base: ScenarioConfig, spec: TrajectorySpec) -> ScenarioConfig:
    """The base scenario at the trace-capture cadence and environment, flying the given design."""
    return replace(
        base,
        name=f"{base.name}-channel",
        environment=environment_preset(OBSERVATION_ENVIRONMENT),
        trajectory=spec,
        frame_rate=OBSERVATION_FRAME_RATE,
        sensor_rate=min(base.sensor_rate, OBSERVATION_FRAME_RATE),
    )


def channel_statistics(config: ScenarioConfig) -> ChannelReport:
    link = simulate_link(config)
    channels = [s.channel for s in link.trace.samples]
    return ChannelReport(config.name, config.seed, config.trajectory.kind, rssi_difference_stats(channels, link.speeds))


async def channel_observations(base, seeds, models=None, workers=4) -> list[TabularReport]:
    reports = []
    for flight, spec in channel_designs(base).items():
        config = observation_config(base, spec)
        results = await _map_threads(channel_statistics, [config.with_seed(s) for s in seeds], workers)
        reports.extend(replace(r, flight=flight) for r in results)
    return reports


Experiment = Callable[..., Awaitable[list[TabularReport]]]

EXPERIMENTS: dict[str, Experiment] = {
    "overall": overall,
    "velocity_bins": velocity_bins,
    "trajectories": trajectories,
    "sensor_hints": sensor_hints,
    "environment_generalization": environment_generalization,
    "evaluation_accuracy": evaluation_accuracy,
    "channel_observations": channel_observations,
}


async def run_experiment(
    name: str,
    base: ScenarioConfig,
    seeds: Sequence[int],
    models: Checkpoint | None = None,
    workers: int = 4,
) -> list[TabularReport]:
    try:
        experiment = EXPERIMENTS[name]
    except KeyError:
        raise ConfigurationError(f"Unknown experiment: {name} (choose from {', '.join(EXPERIMENTS)})") from None
    logger.info(f"Experiments: {name} over {len(seeds)} seeds")
    return await experiment(base, seeds, models, workers)
