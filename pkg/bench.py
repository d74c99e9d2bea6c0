import argparse
import asyncio
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from dotenv import load_dotenv

# Load configuration from single .env file
load_dotenv("staterate-bench.env")

from harness.acceptance import CheckContext, run_checks
from harness.experiments import EXPERIMENTS, run_experiment
from harness.pipeline import PipelineConfig, run_training_pipeline, simulate_traces
from harness.scenario import LEARNED_KINDS, ScenarioConfig, run_sweep
from sinks.checkpoint import load_checkpoint
from sinks.csv_report import aggregate, export_aggregate, export_csv
from sources.base import ConfigurationError
from sources.trace_io import write_trace

# Setup logging
logging.basicConfig(
    level=os.getenv("STATERATE_LOG_LEVEL", "INFO").upper(),
    format='%(levelname)s - %(message)s',
    datefmt='%H:%M:%S'
)
logger = logging.getLogger(__name__)

EXIT_CONFIGURATION = 2
EXIT_CHECK_FAILED = 3


def output_dir() -> Path:
    return Path(os.getenv("STATERATE_OUTPUT_DIR", "output"))


def workers() -> int:
    value = os.getenv("STATERATE_WORKERS", "4")
    try:
        return max(1, int(value))
    except ValueError:
        raise ConfigurationError(f"STATERATE_WORKERS must be an integer, got {value}") from None


def resolve_checkpoint(path: str | None) -> Path | None:
    """Relative checkpoint paths are looked up in STATERATE_CHECKPOINT_DIR when it is set."""
    if not path:
        return None
    path = Path(path)
    base = os.getenv("STATERATE_CHECKPOINT_DIR")
    if base and not path.is_absolute() and not path.exists():
        return Path(base) / path
    return path


def load_pipeline(args) -> PipelineConfig:
    config = PipelineConfig.load(args.config)
    if args.seed is not None:
        config = config.with_seed(args.seed)
    return replace(config, output_dir=str(args.out or config.output_dir or output_dir()))


def cmd_simulate(args):
    config = load_pipeline(args)
    for i, trace in enumerate(simulate_traces(config)):
        write_trace(trace, config.directory / "traces" / f"{config.name}-{i:03d}")


def cmd_train(args):
    result = run_training_pipeline(load_pipeline(args))
    curves = result.training.report["prediction"]
    logger.info(f"Training: final validation accuracy {curves['val_accuracy'][-1]}")


def cmd_evaluate(args):
    config = ScenarioConfig.load(args.config)
    if args.seed is not None:
        config = config.with_seed(args.seed)

    checkpoint = resolve_checkpoint(args.checkpoint or config.checkpoint)
    needs_models = any(a.kind in LEARNED_KINDS for a in config.adapters) or args.experiment in (
        "environment_generalization",
        "evaluation_accuracy",
    )
    if checkpoint is None and needs_models and not args.check:
        raise ConfigurationError(f"Scenario {config.name}: learned adapters need a checkpoint (--checkpoint)")
    models = load_checkpoint(checkpoint) if checkpoint is not None else None
    seeds = [config.seed + i for i in range(args.runs)]

    if args.check:
        pipeline = PipelineConfig.load(args.pipeline) if args.pipeline else None
        # The seed-sweep checks want at least 20 runs
        check_seeds = tuple(range(config.seed, config.seed + max(args.runs, 20)))
        context = CheckContext(config, check_seeds, models, pipeline, workers())
        results = asyncio.run(run_checks(context, args.only))
        failed = [r.name for r in results if not r.passed]
        if failed:
            logger.error(f"Acceptance: failed checks: {', '.join(failed)}")
            sys.exit(EXIT_CHECK_FAILED)
        logger.info(f"Acceptance: all {len(results)} checks passed")
        return

    if args.experiment:
        reports = asyncio.run(run_experiment(args.experiment, config, seeds, models, workers()))
    else:
        reports = asyncio.run(run_sweep([config.with_seed(s) for s in seeds], models, workers()))

    out = Path(args.out or config.output_path or output_dir() / f"{config.name}.csv")
    export_csv(reports, out)


def cmd_compare(args):
    frame = aggregate(args.inputs)
    export_aggregate(frame, Path(args.out or output_dir() / "comparison.csv"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="StateRate bench")
    commands = parser.add_subparsers(dest="command", required=True)

    simulate = commands.add_parser("simulate", help="Simulate labeled flights and write them as trace files")
    train = commands.add_parser("train", help="Train both networks offline and write a checkpoint")
    for sub in (simulate, train):
        sub.add_argument("--config", type=Path, required=True, help="Pipeline JSON file")
        sub.add_argument("--seed", type=int, help="Override the pipeline seed")
        sub.add_argument("--out", type=Path, help="Output directory (default: STATERATE_OUTPUT_DIR)")
    simulate.set_defaults(handler=cmd_simulate)
    train.set_defaults(handler=cmd_train)

    evaluate = commands.add_parser("evaluate", help="Run a scenario (or an experiment design) and write a CSV report")
    evaluate.add_argument("--config", type=Path, required=True, help="Scenario JSON file")
    evaluate.add_argument("--seed", type=int, help="Override the scenario seed")
    evaluate.add_argument("--runs", type=int, default=1, help="Number of consecutive seeds to run (default: 1)")
    evaluate.add_argument("--out", type=Path, help="CSV report path")
    evaluate.add_argument("--checkpoint", type=str, help="Checkpoint for the learned adapters")
    evaluate.add_argument("--experiment", choices=sorted(EXPERIMENTS), help="Run an experiment design around the scenario")
    evaluate.add_argument("--check", action="store_true", help="Run the acceptance checks instead; exit 3 on failure")
    evaluate.add_argument("--pipeline", type=Path, help="Pipeline JSON used by the learnability check")
    evaluate.add_argument("--only", nargs="+", help="Run only these acceptance checks")
    evaluate.set_defaults(handler=cmd_evaluate)

    compare = commands.add_parser("compare", help="Aggregate CSV reports across runs")
    compare.add_argument("inputs", nargs="+", type=Path, help="CSV reports")
    compare.add_argument("--out", type=Path, help="Aggregate CSV path")
    compare.set_defaults(handler=cmd_compare)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if getattr(args, "runs", 1) < 1:
        logger.error("--runs must be at least 1")
        sys.exit(EXIT_CONFIGURATION)
    try:
        args.handler(args)
    except (ConfigurationError, FileNotFoundError) as e:
        logger.error(f"Configuration error: {e}")
        sys.exit(EXIT_CONFIGURATION)


if __name__ == "__main__":
    try:
        main()
    except KeyboardInterrupt:
        logger.info("Script stopped by user.")
