"""
Network checkpoints and training reports.

A checkpoint is an npz archive holding every parameter and batch-norm buffer
of both networks ("pred/conv0.w", "eval_buf/bn0.running_mean", ...), the
standardization constants ("std/csi_mean", ...) and a JSON manifest string
under "manifest" with the format version, network sizes, both layer lists
and the hash of the configuration that produced it. Archive members carry a
fixed timestamp so identical parameters give byte-identical files.
"""
import hashlib
import io
import json
import logging
import zipfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from nn.network import EvaluationNetwork, NetworkConfig, PredictionNetwork
from sources.base import ConfigurationError
from sources.sync import Standardizer

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1
_FIXED_TIMESTAMP = (1980, 1, 1, 0, 0, 0)


@dataclass
class Checkpoint:
    prediction: PredictionNetwork
    evaluation: EvaluationNetwork
    standardizer: Standardizer
    manifest: dict


def config_hash(config: dict | None) -> str:
    payload = json.dumps(config or {}, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(payload).hexdigest()[:16]


def _write_npz(path: Path, arrays: dict[str, np.ndarray]):
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as archive:
        for name in sorted(arrays):
            buffer = io.BytesIO()
            np.lib.format.write_array(buffer, np.asarray(arrays[name]), allow_pickle=False)
            archive.writestr(zipfile.ZipInfo(f"{name}.npy", date_time=_FIXED_TIMESTAMP), buffer.getvalue())


def save_checkpoint(
    path: Path,
    prediction: PredictionNetwork,
    evaluation: EvaluationNetwork,
    standardizer: Standardizer,
    config: dict | None = None,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {}
    for prefix, network in (("pred", prediction), ("eval", evaluation)):
        arrays.update({f"{prefix}/{k}": v for k, v in network.parameters().items()})
        arrays.update({f"{prefix}_buf/{k}": v for k, v in network.buffers().items()})
    arrays.update({f"std/{k}": v for k, v in standardizer.to_arrays().items()})

    manifest = {
        "version": CHECKPOINT_FORMAT_VERSION,
        "network_config": prediction.config.to_dict(),
        "prediction_layers": prediction.manifest(),
        "evaluation_layers": evaluation.manifest(),
        "config_hash": config_hash(config),
    }
    arrays["manifest"] = np.array(json.dumps(manifest, sort_keys=True))
    _write_npz(path, arrays)
    logger.info(f"Checkpoint: Wrote {path} (config {manifest['config_hash']})")
    return path


def _section(data, prefix: str) -> dict[str, np.ndarray]:
    return {k[len(prefix):]: data[k] for k in data.files if k.startswith(prefix)}


def load_checkpoint(path: Path) -> Checkpoint:
    """Rebuild both networks from a checkpoint, validating the manifest and every shape."""
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"Checkpoint not found: {path}")

    with np.load(path, allow_pickle=False) as data:
        if "manifest" not in data.files:
            raise ConfigurationError(f"Checkpoint {path} has no manifest")
        manifest = json.loads(str(data["manifest"]))
        if manifest.get("version") != CHECKPOINT_FORMAT_VERSION:
            raise ConfigurationError(
                f"Unsupported checkpoint version {manifest.get('version')} (expected {CHECKPOINT_FORMAT_VERSION})"
            )
        network_config = NetworkConfig.from_dict(manifest["network_config"])
        prediction = PredictionNetwork(network_config)
        evaluation = EvaluationNetwork(network_config)
        for network, key in ((prediction, "prediction_layers"), (evaluation, "evaluation_layers")):
            if network.manifest() != manifest[key]:
                raise ConfigurationError(f"Checkpoint {path}: {key} do not match the network layout")

        for prefix, network in (("pred", prediction), ("eval", evaluation)):
            params = _section(data, f"{prefix}/")
            missing = set(network.parameters()) - set(params)
            if missing:
                raise ConfigurationError(f"Checkpoint {path} is missing parameters: {', '.join(sorted(missing))}")
            network.set_parameters(params)
            network.set_buffers(_section(data, f"{prefix}_buf/"))
        standardizer = Standardizer.from_arrays(_section(data, "std/"))

    logger.info(f"Checkpoint: Loaded {path} (config {manifest['config_hash']})")
    return Checkpoint(prediction, evaluation, standardizer, manifest)


def write_training_report(path: Path, report: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report, indent=2, sort_keys=True, default=str))
    logger.info(f"Checkpoint: Wrote training report {path}")
    return path
