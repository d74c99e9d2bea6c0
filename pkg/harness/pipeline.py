"""Offline training pipeline - simulate labeled flights, train both networks, write the checkpoint"""
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from harness.scenario import ScenarioConfig, simulate_link
from nn.network import NetworkConfig
from sinks.checkpoint import save_checkpoint, write_training_report
from sources.base import ConfigurationError
from sources.sync import LabeledTrace
from sources.trace_io import write_trace
from staterate.training import TrainingConfig, TrainingResult, train_offline

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PipelineConfig:
    """
    Attributes:
        name: Pipeline name; output files are named after it.
        flights: Flights to simulate for the dataset (scenario configs; their adapters are ignored).
        training: Offline training settings.
        network: Layer sizes of both networks.
        seed: Pipeline seed. Flight, training and initialization seeds derive from it.
        output_dir: Directory for the checkpoint, the training report and saved traces.
        save_traces: Also write every simulated trace to disk.
    """
    name: str
    flights: tuple[ScenarioConfig, ...]
    training: TrainingConfig = TrainingConfig()
    network: NetworkConfig = NetworkConfig()
    seed: int = 0
    output_dir: str | None = None
    save_traces: bool = False
    source: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.flights:
            raise ConfigurationError(f"Pipeline {self.name}: at least one flight is required")

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        defaults = dict(data.get("defaults", {}))
        defaults.setdefault("adapters", ["opt"])
        try:
            flights = tuple(
                ScenarioConfig.from_dict({"name": f"{data.get('name', 'pipeline')}-{i}", **defaults, **flight})
                for i, flight in enumerate(data["flights"])
            )
        except KeyError as e:
            raise ConfigurationError(f"Pipeline config missing field {e}") from e
        return cls(
            name=str(data.get("name", "pipeline")),
            flights=flights,
            training=TrainingConfig.from_dict(data.get("training")),
            network=NetworkConfig.from_dict(data.get("network")),
            seed=int(data.get("seed", 0)),
            output_dir=data.get("output_dir"),
            save_traces=bool(data.get("save_traces", False)),
            source=data,
        )

    @classmethod
    def load(cls, path: Path) -> "PipelineConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"{path} is not valid JSON: {e}") from e
        return cls.from_dict(data)

    def with_seed(self, seed: int) -> "PipelineConfig":
        return replace(self, seed=seed, source={**self.source, "seed": seed})

    @property
    def directory(self) -> Path:
        return Path(self.output_dir or "output")

    @property
    def checkpoint_path(self) -> Path:
        return self.directory / f"{self.name}.npz"

    @property
    def report_path(self) -> Path:
        return self.directory / f"{self.name}-training.json"

    def flight_seeds(self) -> list[int]:
        children = np.random.SeedSequence(self.seed).spawn(len(self.flights) + 1)
        return [int(c.generate_state(1)[0]) for c in children]


@dataclass
class PipelineResult:
    training: TrainingResult
    traces: list[LabeledTrace]
    checkpoint_path: Path
    report_path: Path


def simulate_traces(config: PipelineConfig) -> list[LabeledTrace]:
    seeds = config.flight_seeds()
    traces = []
    for flight, seed in zip(config.flights, seeds):
        trace = simulate_link(flight.with_seed(seed)).trace
        logger.info(f"Pipeline: simulated {len(trace)} frames ({flight.environment.name}, {flight.trajectory.kind})")
        traces.append(trace)
    return traces


def run_training_pipeline(config: PipelineConfig) -> PipelineResult:
    """
    Simulate the dataset, train both networks offline and write the checkpoint
    plus a JSON training report. The same config and seed reproduce identical files.
    """
    traces = simulate_traces(config)
    training_seed = config.flight_seeds()[-1]
    result = train_offline(
        traces,
        replace(config.training, seed=training_seed),
        replace(config.network, seed=training_seed),
    )

    if config.save_traces:
        for i, trace in enumerate(traces):
            write_trace(trace, config.directory / "traces" / f"{config.name}-{i:03d}")

    checkpoint = save_checkpoint(
        config.checkpoint_path,
        result.prediction,
        result.evaluation,
        result.standardizer,
        config.source or {"name": config.name, "seed": config.seed},
    )
    report = write_training_report(
        config.report_path,
        {**result.report, "pipeline": config.name, "seed": config.seed, "checkpoint": str(checkpoint)},
    )
    return PipelineResult(result, traces, checkpoint, report)
