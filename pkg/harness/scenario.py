"""
Scenario runner.

One scenario = one simulated flight in one environment, replayed for every
configured adapter. Every adapter sees the same measured channels, sensor
samples and per-frame uniform draws, so transmission outcomes differ only
through the chosen MCS.
"""
import asyncio
import copy
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from adapters.base import AdapterObservation, RateAdapter
from adapters.charm import CharmAdapter, CharmConfig
from adapters.esnr import EsnrAdapter
from adapters.learned import StateRateAdapter
from adapters.oracle import ORACLE_KINDS, OracleAdapter
from adapters.samplerate import SampleRateAdapter, SampleRateConfig
from phy.link import DEFAULT_PHY, PhyConfig, check_mcs, per_table, throughput, transmit
from sinks.checkpoint import Checkpoint, load_checkpoint
from sources.base import (
    VELOCITY_BINS,
    ChannelState,
    ConfigurationError,
    EnvironmentSpec,
    FlightState,
    SensorNoiseSpec,
    TrajectorySpec,
)
from sources.channel import (
    DEFAULT_CARRIER,
    DEFAULT_EST_NOISE_SIGMA,
    add_estimation_noise,
    environment_preset,
    evolve_fading,
    init_fading,
    render_csi,
)
from sources.flightsim import DEFAULT_SENSOR_RATE, generate_trajectory, kinematics, sample_sensors
from sources.sync import LabeledTrace, align, build_labeled_trace
from staterate.inference import evaluation_substitute
from staterate.prober import ProberConfig
from staterate.training import OnlineConfig

logger = logging.getLogger(__name__)

DEFAULT_FRAME_RATE = 200.0
DEFAULT_DURATION = 120.0
LEARNED_KINDS = ("staterate", "staterate_offline", "staterate_retrained")
ADAPTER_KINDS = ORACLE_KINDS + (
    "samplerate",
    "dynamic_samplerate",
    "charm",
    "esnr",
    "dynamic_esnr",
) + LEARNED_KINDS
EVALUATORS = ("network", "snr", "esnr")
_SEED_STREAMS = ("trajectory", "sensors", "fading", "estimation", "outcomes", "adapters")


@dataclass(frozen=True)
class AdapterSpec:
    kind: str
    name: str = ""
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ADAPTER_KINDS:
            raise ConfigurationError(f"Unknown adapter kind: {self.kind} (choose from {', '.join(ADAPTER_KINDS)})")
        if not self.name:
            object.__setattr__(self, "name", self.kind)

    @classmethod
    def from_dict(cls, data: dict | str) -> "AdapterSpec":
        if isinstance(data, str):
            return cls(data)
        try:
            return cls(data["kind"], data.get("name", ""), dict(data.get("params", {})))
        except KeyError:
            raise ConfigurationError(f"Adapter entry without kind: {data}") from None


@dataclass(frozen=True)
class ScenarioConfig:
    """
    One flight, one environment, a set of adapters.

    Attributes:
        name: Scenario name used in reports.
        environment: Propagation environment.
        trajectory: Flight description; its duration is replaced by `duration`.
        adapters: Adapters to replay the flight with.
        frame_rate: Frames per second, one channel measurement each.
        duration: Flight length in seconds.
        seed: Scenario seed; every random stream derives from it.
        output_path: Where the CSV report goes, if anywhere.
        checkpoint: Checkpoint for the learned adapters.
        evaluator: Virtual-label source online: "network", "snr" or "esnr".
        window: Length of the windowed-throughput series bins in seconds.
    """
    name: str
    environment: EnvironmentSpec
    trajectory: TrajectorySpec
    adapters: tuple[AdapterSpec, ...]
    frame_rate: float = DEFAULT_FRAME_RATE
    duration: float = DEFAULT_DURATION
    seed: int = 0
    output_path: str | None = None
    checkpoint: str | None = None
    phy: PhyConfig = DEFAULT_PHY
    sensor_rate: float = DEFAULT_SENSOR_RATE
    sensor_noise: SensorNoiseSpec = SensorNoiseSpec()
    est_noise_sigma: float = DEFAULT_EST_NOISE_SIGMA
    carrier: float = DEFAULT_CARRIER
    prober: ProberConfig = ProberConfig()
    online: OnlineConfig = OnlineConfig()
    evaluator: str = "network"
    window: float = 1.0

    def __post_init__(self):
        if not self.adapters:
            raise ConfigurationError(f"Scenario {self.name}: at least one adapter is required")
        if not self.duration > 0 or not self.frame_rate > 0:
            raise ConfigurationError(f"Scenario {self.name}: duration and frame_rate must be positive")
        if not 0 < self.sensor_rate <= self.frame_rate:
            raise ConfigurationError(f"Scenario {self.name}: sensor_rate must be in (0, frame_rate]")
        if self.est_noise_sigma < 0 or not self.carrier > 0 or not self.window > 0:
            raise ConfigurationError(f"Scenario {self.name}: invalid noise, carrier or window setting")
        if self.evaluator not in EVALUATORS:
            raise ConfigurationError(f"Scenario {self.name}: unknown evaluator {self.evaluator}")
        names = [a.name for a in self.adapters]
        if len(set(names)) != len(names):
            raise ConfigurationError(f"Scenario {self.name}: adapter names must be unique")

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        try:
            env = data["environment"]
            environment = environment_preset(env) if isinstance(env, str) else EnvironmentSpec.from_dict(env)
            noise = data.get("sensor_noise", {})
            return cls(
                name=str(data.get("name", "scenario")),
                environment=environment,
                trajectory=TrajectorySpec.from_dict(
                    {"duration": data.get("duration", DEFAULT_DURATION), **data["trajectory"]}
                ),
                adapters=tuple(AdapterSpec.from_dict(a) for a in data["adapters"]),
                frame_rate=float(data.get("frame_rate", DEFAULT_FRAME_RATE)),
                duration=float(data.get("duration", DEFAULT_DURATION)),
                seed=int(data.get("seed", 0)),
                output_path=data.get("output_path"),
                checkpoint=data.get("checkpoint"),
                phy=PhyConfig.from_dict(data.get("phy")),
                sensor_rate=float(data.get("sensor_rate", DEFAULT_SENSOR_RATE)),
                sensor_noise=SensorNoiseSpec(**noise),
                est_noise_sigma=float(data.get("est_noise_sigma", DEFAULT_EST_NOISE_SIGMA)),
                carrier=float(data.get("carrier", DEFAULT_CARRIER)),
                prober=ProberConfig.from_dict(data.get("prober")),
                online=OnlineConfig.from_dict(data.get("online")),
                evaluator=str(data.get("evaluator", "network")),
                window=float(data.get("window", 1.0)),
            )
        except KeyError as e:
            raise ConfigurationError(f"Scenario config missing field {e}") from e
        except TypeError as e:
            raise ConfigurationError(f"Invalid scenario config: {e}") from e

    @classmethod
    def load(cls, path: Path) -> "ScenarioConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"{path} is not valid JSON: {e}") from e
        return cls.from_dict(data)

    def with_seed(self, seed: int) -> "ScenarioConfig":
        return replace(self, seed=seed)


def derive_seeds(seed: int, trajectory_seed: int = 0) -> dict[str, int]:
    children = np.random.SeedSequence([seed, trajectory_seed]).spawn(len(_SEED_STREAMS))
    return {name: int(child.generate_state(1)[0]) for name, child in zip(_SEED_STREAMS, children)}


@dataclass
class SimulatedLink:
    """
    One realized flight: ground-truth states, the labeled trace the
    transmitter sees (measured CSI, aligned sensors, labels from the true
    channel), the true PER of every MCS per frame and the shared draws.
    """
    flight: list[FlightState]
    trace: LabeledTrace
    pers: np.ndarray
    draws: np.ndarray
    frame_rate: float

    @property
    def labels(self) -> np.ndarray:
        return self.trace.labels()

    @property
    def speeds(self) -> np.ndarray:
        return kinematics(self.flight).v

    @property
    def true_channels(self) -> list[ChannelState]:
        return [s.true_channel for s in self.trace.samples]

    def frames(self) -> Iterator[tuple[ChannelState, FlightState]]:
        return self.trace.frames()

    def __len__(self) -> int:
        return len(self.flight)


def simulate_link(config: ScenarioConfig) -> SimulatedLink:
    seeds = derive_seeds(config.seed, config.trajectory.seed)
    dt = 1.0 / config.frame_rate
    env, phy = config.environment, config.phy

    spec = replace(config.trajectory, duration=config.duration, seed=seeds["trajectory"])
    flight = generate_trajectory(spec, dt)
    sensors = sample_sensors(flight, config.sensor_rate, replace(config.sensor_noise, seed=seeds["sensors"]))

    fading = init_fading(env, seeds["fading"])
    est_rng = np.random.default_rng(seeds["estimation"])
    true_channels, measured = [], []
    for n, state in enumerate(flight):
        if n:
            fading = evolve_fading(fading, dt, state.v, config.carrier, env)
        clean = render_csi(fading, env, state.d, 0.0, tx_power=phy.tx_power, timestamp=state.timestamp)
        true_channels.append(clean)
        measured.append(add_estimation_noise(clean, config.est_noise_sigma, est_rng))

    trace = build_labeled_trace(
        align(measured, sensors),
        phy=phy,
        true_channels=true_channels,
        environment_name=env.name,
        metadata={"scenario": config.name, "seed": config.seed, "trajectory": spec.kind, "frame_rate": config.frame_rate},
    )
    pers = per_table(np.stack([c.csi for c in true_channels]), phy.payload_bits, phy)
    draws = np.random.default_rng(seeds["outcomes"]).random(len(flight))
    logger.debug(f"Scenario: simulated {len(flight)} frames of {spec.kind} flight in {env.name}")
    return SimulatedLink(flight, trace, pers, draws, config.frame_rate)


def build_adapter(
    spec: AdapterSpec,
    index: int,
    link: SimulatedLink,
    config: ScenarioConfig,
    models: Checkpoint | None,
) -> RateAdapter:
    sub_seed = int(np.random.SeedSequence([derive_seeds(config.seed, config.trajectory.seed)["adapters"], index])
                   .generate_state(1)[0])
    params = dict(spec.params)
    try:
        if spec.kind in ORACLE_KINDS:
            adapter = OracleAdapter(spec.kind, link.labels)
        elif spec.kind in ("samplerate", "dynamic_samplerate"):
            adapter = SampleRateAdapter(
                SampleRateConfig(**params, seed=sub_seed),
                dynamic=spec.kind == "dynamic_samplerate",
                phy=config.phy,
            )
        elif spec.kind == "charm":
            adapter = CharmAdapter(CharmConfig(**params), config.phy)
        elif spec.kind in ("esnr", "dynamic_esnr"):
            adapter = EsnrAdapter(config.phy, dynamic=spec.kind == "dynamic_esnr", **params)
        else:
            if models is None:
                raise ConfigurationError(f"Adapter {spec.name} needs a checkpoint")
            evaluator = (
                models.evaluation if config.evaluator == "network"
                else evaluation_substitute(config.evaluator, config.phy)
            )
            mode = "retrain" if spec.kind == "staterate_retrained" else config.online.mode
            adapter = StateRateAdapter(
                copy.deepcopy(models.prediction),
                evaluator,
                models.standardizer,
                prober_config=ProberConfig.from_dict({**asdict(config.prober), **params.get("prober", {})}),
                online_config=replace(config.online, seed=sub_seed, mode=mode),
                online=spec.kind != "staterate_offline",
                takeoff_position=link.flight[0].position,
            )
    except TypeError as e:
        raise ConfigurationError(f"Adapter {spec.name}: invalid parameters ({e})") from e
    adapter.name = spec.name
    return adapter


def run_adapter(adapter: RateAdapter, link: SimulatedLink, phy: PhyConfig = DEFAULT_PHY):
    """Replay the flight through one adapter: (chosen MCS per frame, transmission records)."""
    samples = link.trace.samples
    choices = np.empty(len(link), dtype=int)
    records = []
    record = None
    for n in range(len(link)):
        if n:
            obs = AdapterObservation(n, samples[n - 1].channel, record, samples[n - 1].flight)
        else:
            obs = AdapterObservation(0)
        mcs = check_mcs(int(adapter.choose(obs)))
        record = transmit(link.pers[n, mcs], link.draws[n], mcs, phy.payload_bits, n, phy)
        choices[n] = mcs
        records.append(record)
    return choices, records


@dataclass(frozen=True)
class BinMetrics:
    frames: int
    prediction_accuracy: float
    throughput: float
    throughput_vs_opt: float


@dataclass(frozen=True)
class AdapterMetrics:
    name: str
    kind: str
    prediction_accuracy: float
    throughput: float  # Mbps
    throughput_vs_opt: float
    bins: dict[str, BinMetrics]
    series: tuple[float, ...]


@dataclass(frozen=True)
class MetricsReport:
    scenario: str
    seed: int
    environment: str
    adapters: dict[str, AdapterMetrics]

    def to_rows(self) -> list[tuple]:
        rows = []
        for metrics in self.adapters.values():
            for metric in ("prediction_accuracy", "throughput", "throughput_vs_opt"):
                rows.append((self.scenario, self.seed, metrics.name, metric, "all", getattr(metrics, metric)))
            for label, b in metrics.bins.items():
                for metric in ("prediction_accuracy", "throughput", "throughput_vs_opt"):
                    rows.append((self.scenario, self.seed, metrics.name, metric, label, getattr(b, metric)))
        return rows


def _goodput(records, mask=None) -> float:
    if mask is not None:
        records = [r for r, keep in zip(records, mask) if keep]
    return throughput(records) if records else 0.0


def _ratio(value: float, reference: float) -> float:
    return value / reference if reference > 0 else 0.0


def _metrics(name, kind, choices, records, link, opt_records, window_frames) -> AdapterMetrics:
    labels = link.labels
    speeds = link.speeds
    bins = {}
    for label, lower, upper in VELOCITY_BINS:
        mask = (speeds >= lower) & (speeds < upper)
        if not mask.any():
            continue
        thr = _goodput(records, mask)
        bins[label] = BinMetrics(
            frames=int(mask.sum()),
            prediction_accuracy=float(np.mean(choices[mask] == labels[mask])),
            throughput=thr,
            throughput_vs_opt=_ratio(thr, _goodput(opt_records, mask)),
        )
    series = tuple(
        _goodput(records[start:start + window_frames]) for start in range(0, len(records), window_frames)
    )
    total = throughput(records)
    return AdapterMetrics(
        name=name,
        kind=kind,
        prediction_accuracy=float(np.mean(choices == labels)),
        throughput=total,
        throughput_vs_opt=_ratio(total, throughput(opt_records)),
        bins=bins,
        series=series,
    )


def run_scenario(config: ScenarioConfig, models: Checkpoint | None = None) -> MetricsReport:
    """
    Simulate the flight once and replay it for every adapter.

    Learned adapters use `models`, or the checkpoint named in the config.
    The OPT reference is always computed for throughput_vs_opt, listed or not.
    """
    if models is None and config.checkpoint and any(a.kind in LEARNED_KINDS for a in config.adapters):
        models = load_checkpoint(Path(config.checkpoint))

    logger.info(f"Scenario: {config.name} seed {config.seed} ({config.environment.name}, {config.trajectory.kind})")
    link = simulate_link(config)
    window_frames = max(1, int(round(config.window * config.frame_rate)))

    opt_choices, opt_records = run_adapter(OracleAdapter("opt", link.labels), link, config.phy)
    results = {}
    for index, spec in enumerate(config.adapters):
        if spec.kind == "opt":
            choices, records = opt_choices, opt_records
        else:
            adapter = build_adapter(spec, index, link, config, models)
            choices, records = run_adapter(adapter, link, config.phy)
        results[spec.name] = _metrics(spec.name, spec.kind, choices, records, link, opt_records, window_frames)
        logger.info(
            f"Scenario: {spec.name} accuracy {results[spec.name].prediction_accuracy:.3f} "
            f"throughput {results[spec.name].throughput:.2f} Mbps"
        )
    return MetricsReport(config.name, config.seed, config.environment.name, results)


async def run_sweep(
    configs: Sequence[ScenarioConfig],
    models: Checkpoint | None = None,
    workers: int = 4,
) -> list[MetricsReport]:
    """Run scenarios in worker threads; reports come back in config order."""
    limit = asyncio.Semaphore(max(1, workers))

    async def run_one(config: ScenarioConfig) -> MetricsReport:
        async with limit:
            return await asyncio.to_thread(run_scenario, config, models)

    async with asyncio.TaskGroup() as tg:
        tasks = [tg.create_task(run_one(c)) for c in configs]
    return [t.result() for t in tasks]
