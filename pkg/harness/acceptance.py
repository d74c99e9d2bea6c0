"""
Acceptance checks run by `bench.py evaluate --check`.

Every check returns a CheckResult; the CLI exits with code 3 when any of them
fails. Checks that need trained networks are skipped (and reported as such)
when no checkpoint is available.
"""
import asyncio
import logging
from dataclasses import dataclass, replace
from typing import Awaitable, Callable, Sequence

import numpy as np

from harness.experiments import (
    BASELINE_KINDS,
    adapter_specs,
    channel_designs,
    channel_statistics,
    evaluation_agreement,
    observation_config,
    prediction_agreement,
    trajectory_designs,
)
from harness.pipeline import PipelineConfig, run_training_pipeline
from harness.scenario import ScenarioConfig, run_sweep, simulate_link
from nn.gradcheck import gradient_check
from nn.network import EvaluationNetwork, NetworkConfig, PredictionNetwork
from sinks.checkpoint import Checkpoint
from sources.base import ConfigurationError, FlightState, TrajectorySpec, recent_frames
from sources.channel import coherence_time, environment_preset
from sources.sync import featurize_trace, fit_standardizer
from staterate.prober import ProberConfig, ProberState, prober_step
from staterate.training import OnlineConfig, finetune_online, sequence_probs, train_offline

logger = logging.getLogger(__name__)

GRADIENT_TOLERANCE = 1e-4
MUTATION_THRESHOLD = 1e-1
DOMINANCE_TOLERANCE = 0.02
STATIC_TOLERANCE = 0.10


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str
    skipped: bool = False


@dataclass(frozen=True)
class CheckContext:
    base: ScenarioConfig
    seeds: tuple[int, ...] = tuple(range(20))
    models: Checkpoint | None = None
    pipeline: PipelineConfig | None = None
    workers: int = 4


def _skip(name: str, reason: str) -> CheckResult:
    return CheckResult(name, True, f"skipped: {reason}", skipped=True)


async def check_coherence(ctx: CheckContext) -> CheckResult:
    t = coherence_time(20.0, 2.4e9)
    return CheckResult("coherence", abs(t - 2.644e-3) <= 1e-6, f"coherence_time(20 m/s, 2.4 GHz) = {t * 1e3:.4f} ms")


class FlippedBackward:
    """Wraps a model and negates every analytic gradient; a working check must catch it."""

    def __init__(self, model):
        self.model = model

    def parameters(self):
        return self.model.parameters()

    def loss(self, inputs, target):
        return self.model.loss(inputs, target)

    def loss_and_grads(self, inputs, target):
        loss, grads = self.model.loss_and_grads(inputs, target)
        return loss, {k: -g for k, g in grads.items()}


TINY_NETWORK = NetworkConfig(
    conv_channels=(2, 3, 2),
    kernel_sizes=(3, 3, 3),
    lstm_hidden=4,
    lstm_layers=2,
    fc_hidden=5,
    eval_hidden=5,
    n_subcarriers=8,
)


def gradient_problems(config: NetworkConfig = TINY_NETWORK, seed: int = 0):
    """(name, model, inputs, target) for both networks at random initialization."""
    rng = np.random.default_rng(seed)
    L = config.n_subcarriers
    pred_inputs = (rng.normal(size=(2, 3, 2, L)), rng.normal(size=(2, 3, 4)))
    pred_target = np.eye(8)[rng.integers(0, 8, size=(2, 3))]
    eval_inputs = (rng.normal(size=(4, 2, L)), rng.normal(size=(4, 1)))
    eval_target = np.eye(8)[rng.integers(0, 8, size=4)]
    return [
        ("prediction", PredictionNetwork(config), pred_inputs, pred_target),
        ("evaluation", EvaluationNetwork(config), eval_inputs, eval_target),
    ]


async def check_gradients(ctx: CheckContext) -> CheckResult:
    details, passed = [], True
    for name, model, inputs, target in gradient_problems():
        error = gradient_check(model, inputs, target)
        mutated = gradient_check(FlippedBackward(model), inputs, target)
        passed &= error < GRADIENT_TOLERANCE and mutated > MUTATION_THRESHOLD
        details.append(f"{name} {error:.2e} (flipped {mutated:.2f})")
    return CheckResult("gradients", passed, ", ".join(details))


async def check_oracle_dominance(ctx: CheckContext) -> CheckResult:
    designs = list(trajectory_designs(ctx.base).values()) + [
        TrajectorySpec("random", ctx.base.duration, ctx.base.trajectory.height, {"speed_cap": 10.0})
    ]
    configs = [
        replace(ctx.base, name="dominance", trajectory=designs[i % len(designs)], adapters=adapter_specs(BASELINE_KINDS))
        .with_seed(seed)
        for i, seed in enumerate(ctx.seeds)
    ]
    reports = await run_sweep(configs, workers=ctx.workers)
    worst = max(
        m.throughput_vs_opt for r in reports for m in r.adapters.values() if m.kind != "opt"
    )
    return CheckResult(
        "oracle_dominance",
        worst <= 1.0 + DOMINANCE_TOLERANCE,
        f"highest throughput_vs_opt over {len(reports)} runs: {worst:.4f}",
    )


def static_scenario(base: ScenarioConfig, models: Checkpoint | None) -> ScenarioConfig:
    kinds = BASELINE_KINDS + (("staterate",) if models is not None else ())
    return replace(
        base,
        name="static",
        environment=environment_preset("square"),
        trajectory=TrajectorySpec("hover", base.duration, 10.0, {"anchor_distance": 5.0}),
        adapters=adapter_specs(kinds),
    )


async def check_static_convergence(ctx: CheckContext) -> CheckResult:
    [report] = await run_sweep([static_scenario(ctx.base, ctx.models).with_seed(ctx.seeds[0])], ctx.models)
    lowest = min(report.adapters.values(), key=lambda m: m.throughput_vs_opt)
    return CheckResult(
        "static_convergence",
        lowest.throughput_vs_opt >= 1.0 - STATIC_TOLERANCE,
        f"lowest throughput_vs_opt {lowest.throughput_vs_opt:.4f} ({lowest.name})",
    )


def channel_ordering_holds(flight: dict, hover: dict, grounded: dict) -> bool:
    means = [flight[label]["mean_abs_delta"] for label in ("0-2", "2-6", "6-10") if label in flight]
    increasing = len(means) > 1 and all(b > a for a, b in zip(means, means[1:]))
    hover_max = max(v["max_abs_delta"] for v in hover.values())
    grounded_max = max(v["max_abs_delta"] for v in grounded.values())
    return increasing and hover_max >= 6.0 and grounded_max <= 4.0


async def check_channel_observations(ctx: CheckContext) -> CheckResult:
    designs = channel_designs(ctx.base)

    def one_seed(seed: int) -> bool:
        stats = {
            name: channel_statistics(observation_config(ctx.base, spec).with_seed(seed)).stats
            for name, spec in designs.items()
        }
        return channel_ordering_holds(stats["flight"], stats["hover"], stats["grounded"])

    results = await asyncio.gather(*(asyncio.to_thread(one_seed, s) for s in ctx.seeds))
    needed = int(np.ceil(0.9 * len(results)))
    return CheckResult(
        "channel_observations",
        sum(results) >= needed,
        f"ordering held on {sum(results)} of {len(results)} seeds (need {needed})",
    )


def majority_rate(labels: np.ndarray) -> float:
    return float(np.bincount(labels, minlength=8).max() / len(labels)) if len(labels) else 0.0


async def check_learnability(ctx: CheckContext) -> CheckResult:
    if ctx.pipeline is None:
        return _skip("learnability", "no training pipeline configured")
    result = await asyncio.to_thread(run_training_pipeline, ctx.pipeline)
    accuracy = result.training.report["prediction"]["val_accuracy"][-1]
    control = await asyncio.to_thread(
        train_offline,
        result.traces,
        replace(ctx.pipeline.training, shuffle_labels=True, evaluation_epochs=1),
        ctx.pipeline.network,
    )
    control_accuracy = control.report["prediction"]["val_accuracy"][-1]
    majority = majority_rate(np.concatenate([t.labels() for t in result.traces]))
    # Permuted labels can at most learn the class prior
    ceiling = max(0.20, majority + 0.05)
    return CheckResult(
        "learnability",
        accuracy is not None and accuracy >= 0.75 and control_accuracy is not None and control_accuracy <= ceiling,
        f"validation accuracy {accuracy}, shuffled control {control_accuracy} (ceiling {ceiling:.3f})",
    )


async def check_throughput_ordering(ctx: CheckContext) -> CheckResult:
    if ctx.models is None:
        return _skip("throughput_ordering", "no checkpoint")
    config = replace(
        ctx.base,
        name="ordering",
        trajectory=trajectory_designs(ctx.base)["variable_back_and_forth"],
        adapters=adapter_specs(("opt", "esnr", "dynamic_esnr", "staterate")),
    )
    seeds = ctx.seeds[:10]
    reports = await run_sweep([config.with_seed(s) for s in seeds], ctx.models, ctx.workers)

    def wins(report) -> bool:
        bins = {name: m.bins.get("2-6") for name, m in report.adapters.items()}
        if any(b is None for b in bins.values()):
            return False
        return bins["staterate"].throughput >= max(bins["esnr"].throughput, bins["dynamic_esnr"].throughput)

    count = sum(wins(r) for r in reports)
    needed = int(np.ceil(0.8 * len(reports)))
    return CheckResult("throughput_ordering", count >= needed, f"StateRate ahead in 2-6 m/s on {count} of {len(reports)} seeds")


async def check_evaluation_fidelity(ctx: CheckContext) -> CheckResult:
    if ctx.models is None:
        return _skip("evaluation_fidelity", "no checkpoint")
    config = replace(ctx.base, trajectory=trajectory_designs(ctx.base)["variable_back_and_forth"])
    reports = await asyncio.gather(
        *(asyncio.to_thread(evaluation_agreement, config.with_seed(s), ctx.models) for s in ctx.seeds[:5])
    )
    mean = float(np.mean([r.mean_over_bins("network") for r in reports]))
    return CheckResult("evaluation_fidelity", mean >= 0.85, f"evaluation network agreement {mean:.4f} averaged over velocity bins")


def non_fc_identical(before: PredictionNetwork, after: PredictionNetwork) -> bool:
    fc = set(before.group_names("fc"))
    params_after = after.parameters()
    return all(
        np.array_equal(value, params_after[name]) for name, value in before.parameters().items() if name not in fc
    )


async def check_online_benefit(ctx: CheckContext) -> CheckResult:
    if ctx.models is None:
        return _skip("online_benefit", "no checkpoint")
    grove = replace(
        ctx.base,
        environment=environment_preset("grove"),
        trajectory=trajectory_designs(ctx.base)["variable_back_and_forth"],
    )
    buffer_link, held_out = await asyncio.gather(
        asyncio.to_thread(simulate_link, grove.with_seed(ctx.seeds[0])),
        asyncio.to_thread(simulate_link, grove.with_seed(ctx.seeds[1 % len(ctx.seeds)] + 1000)),
    )
    buffer = recent_frames(buffer_link, ProberConfig().buffer_capacity)
    models = ctx.models
    tuned = finetune_online(models.prediction, models.evaluation, buffer, models.standardizer, OnlineConfig())
    before = prediction_agreement(models.prediction, held_out.trace, models.standardizer)
    after = prediction_agreement(tuned, held_out.trace, models.standardizer)
    partition = non_fc_identical(models.prediction, tuned)
    return CheckResult(
        "online_benefit",
        after > before and partition,
        f"grove agreement {before:.4f} -> {after:.4f}, non-FC parameters unchanged: {partition}",
    )


def fc_change_at_fixed_point(network: PredictionNetwork, trace, standardizer) -> float:
    """Fine-tune against the network's own predictions for one epoch; returns the FC parameter change norm."""
    planes, states, _ = featurize_trace(trace, standardizer)
    own = sequence_probs(network, planes[:-1], states[:-1])
    buffer = recent_frames(trace)
    tuned = finetune_online(network, lambda csi: own, buffer, standardizer, OnlineConfig(epochs=1, lr=1e-4))
    before, after = network.parameters(), tuned.parameters()
    return float(np.sqrt(sum(np.sum((after[n] - before[n]) ** 2) for n in network.group_names("fc"))))


async def check_fixed_point(ctx: CheckContext) -> CheckResult:
    link = await asyncio.to_thread(simulate_link, replace(ctx.base, duration=2.0).with_seed(ctx.seeds[0]))
    network = ctx.models.prediction if ctx.models is not None else PredictionNetwork(replace(TINY_NETWORK, n_subcarriers=52))
    standardizer = ctx.models.standardizer if ctx.models is not None else fit_standardizer([link.trace])
    change = fc_change_at_fixed_point(network, link.trace, standardizer)
    return CheckResult("fixed_point", change < 1e-6, f"FC parameter change {change:.3e}")


PROBER_SCRIPT_CONFIG = ProberConfig(distance_threshold=50.0, window=10, accuracy_threshold=0.7, cooldown=5)


def scripted_prober_triggers(config: ProberConfig = PROBER_SCRIPT_CONFIG) -> list[int]:
    """
    20 correct frames 10 m from takeoff, then 14 frames 100 m out alternating
    wrong/right. Returns the 1-based indices of the far frames that trigger.
    """
    state = ProberState((0.0, 0.0, 0.0), config)
    near = FlightState(0.0, (10.0, 0.0, 0.0), 10.0, 0.0, 0.0)
    far = FlightState(0.0, (100.0, 0.0, 0.0), 100.0, 0.0, 0.0)
    for _ in range(20):
        _, fired = prober_step(state, near, True)
        if fired:
            return [0]
    triggers = []
    for k in range(1, 15):
        _, fired = prober_step(state, far, k % 2 == 0)
        if fired:
            triggers.append(k)
    return triggers


async def check_prober_contract(ctx: CheckContext) -> CheckResult:
    triggers = scripted_prober_triggers()
    return CheckResult("prober_contract", triggers == [7, 13], f"triggers at far frames {triggers} (expected [7, 13])")


Check = Callable[[CheckContext], Awaitable[CheckResult]]

CHECKS: dict[str, Check] = {
    "coherence": check_coherence,
    "gradients": check_gradients,
    "oracle_dominance": check_oracle_dominance,
    "static_convergence": check_static_convergence,
    "channel_observations": check_channel_observations,
    "learnability": check_learnability,
    "throughput_ordering": check_throughput_ordering,
    "evaluation_fidelity": check_evaluation_fidelity,
    "online_benefit": check_online_benefit,
    "fixed_point": check_fixed_point,
    "prober_contract": check_prober_contract,
}


async def run_checks(ctx: CheckContext, names: Sequence[str] | None = None) -> list[CheckResult]:
    names = list(names or CHECKS)
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise ConfigurationError(f"Unknown checks: {', '.join(unknown)}")
    results = []
    for name in names:
        result = await CHECKS[name](ctx)
        level = logging.INFO if result.passed else logging.ERROR
        logger.log(level, f"Acceptance: {name} {'skipped' if result.skipped else 'ok' if result.passed else 'FAILED'} - {result.detail}")
        results.append(result)
    return results
