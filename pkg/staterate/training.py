"""
Training - offline pretraining of both networks and online fine-tuning of the prediction head.

Offline, the prediction network learns L_{n+1} from (C_n, S_n) with
truncated BPTT over fixed windows, and the evaluation network learns L_n
from C_n. Online, the evaluation network (or a rule-based substitute)
supplies soft virtual labels and only the FC group of a copy of the
prediction network is updated.
"""
import copy
import logging
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from nn.layers import cross_entropy, softmax
from nn.network import N_CLASSES, EvaluationNetwork, NetworkConfig, PredictionNetwork
from nn.optim import Adam, AdamConfig
from sources.base import ChannelState, ConfigurationError, FlightState
from sources.sync import (
    LabeledTrace,
    Standardizer,
    csi_planes,
    featurize_trace,
    fit_standardizer,
    standardize,
    state_vector,
)
from staterate.inference import VirtualLabeler, virtual_labels

logger = logging.getLogger(__name__)

ENCODE_CHUNK = 512
ONLINE_MODES = ("finetune", "retrain")


@dataclass(frozen=True)
class TrainingConfig:
    """
    Offline training settings.

    Attributes:
        epochs: Epoch cap for the prediction network.
        evaluation_epochs: Epoch cap for the evaluation network; defaults to epochs.
        batch_size: Windows per batch (prediction) or frames per batch (evaluation).
        window: Truncated BPTT length in frames.
        stride: Step between window starts; defaults to half a window.
        lr: Adam learning rate.
        validation_split: Trailing fraction of every trace held out.
        shuffle_labels: Permute training labels (no-signal control run).
        seed: Seed for shuffling and label permutation.
    """
    epochs: int = 20
    evaluation_epochs: int | None = None
    batch_size: int = 64
    window: int = 16
    stride: int | None = None
    lr: float = 1e-3
    validation_split: float = 0.2
    shuffle_labels: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.window < 1:
            raise ConfigurationError("epochs, batch_size and window must be positive")
        if self.evaluation_epochs is not None and self.evaluation_epochs < 1:
            raise ConfigurationError(f"evaluation_epochs must be positive, got {self.evaluation_epochs}")
        if self.stride is not None and self.stride < 1:
            raise ConfigurationError(f"stride must be positive, got {self.stride}")
        if not 0.0 <= self.validation_split < 1.0:
            raise ConfigurationError(f"validation_split must be in [0, 1), got {self.validation_split}")
        if not self.lr > 0:
            raise ConfigurationError(f"lr must be positive, got {self.lr}")

    @property
    def window_stride(self) -> int:
        return self.stride or max(1, self.window // 2)

    @property
    def evaluation_epoch_count(self) -> int:
        return self.evaluation_epochs or self.epochs

    @classmethod
    def from_dict(cls, data: dict | None) -> "TrainingConfig":
        data = dict(data or {})
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"Unknown training settings: {', '.join(sorted(unknown))}")
        return cls(**data)


@dataclass(frozen=True)
class OnlineConfig:
    """
    Online adaptation settings.

    Attributes:
        epochs: Fine-tuning passes over the buffer.
        batch_size: Frames per fine-tuning batch.
        lr: Fine-tuning learning rate.
        publish_latency: Frames between a trigger and the new parameters going live.
        mode: "finetune" (FC head only) or "retrain" (fresh network on the buffer).
        retrain_epochs: Epochs for the retrain mode.
        seed: Shuffling seed.
    """
    epochs: int = 5
    batch_size: int = 16
    lr: float = 1e-4
    publish_latency: int = 200
    mode: str = "finetune"
    retrain_epochs: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ONLINE_MODES:
            raise ConfigurationError(f"Unknown online mode: {self.mode}")
        if self.epochs < 1 or self.batch_size < 1 or self.retrain_epochs < 1 or self.publish_latency < 0:
            raise ConfigurationError("Online epochs and batch size must be positive, latency non-negative")

    @classmethod
    def from_dict(cls, data: dict | None) -> "OnlineConfig":
        data = dict(data or {})
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"Unknown online settings: {', '.join(sorted(unknown))}")
        return cls(**data)


@dataclass
class TrainingResult:
    prediction: PredictionNetwork
    evaluation: EvaluationNetwork
    standardizer: Standardizer
    report: dict


@dataclass
class _Sequence:
    """Featurized inputs of one flight and per-frame target distributions aligned to them."""
    planes: np.ndarray
    states: np.ndarray
    targets: np.ndarray


def _one_hot(labels: np.ndarray) -> np.ndarray:
    return np.eye(N_CLASSES)[labels]


def encode_sequence(network: PredictionNetwork, planes: np.ndarray, states: np.ndarray) -> np.ndarray:
    """LSTM output for a whole flight from the zero state, in chunks: (T, hidden)."""
    outputs, lstm_state = [], None
    for start in range(0, len(planes), ENCODE_CHUNK):
        hs, lstm_state = network.encode(
            planes[None, start:start + ENCODE_CHUNK], states[None, start:start + ENCODE_CHUNK], lstm_state
        )
        outputs.append(hs[0])
    return np.concatenate(outputs) if outputs else np.zeros((0, network.config.lstm_hidden))


def sequence_probs(network: PredictionNetwork, planes: np.ndarray, states: np.ndarray) -> np.ndarray:
    """W^P for every step of a flight from the zero state: (T, 8)."""
    hs = encode_sequence(network, planes, states)
    logits, _ = network.head_forward(hs)
    return softmax(logits)


def _windows(sequences: list[_Sequence], window: int, stride: int) -> list[tuple[int, int]]:
    starts = []
    for i, seq in enumerate(sequences):
        starts += [(i, s) for s in range(0, len(seq.planes) - window + 1, stride)]
    return starts


def _fit_prediction(
    network: PredictionNetwork,
    sequences: list[_Sequence],
    config: TrainingConfig,
    rng: np.random.Generator,
    validation: list[_Sequence] | None = None,
    label: str = "prediction",
) -> dict:
    window = min(config.window, max(len(s.planes) for s in sequences))
    starts = _windows(sequences, window, config.window_stride)
    if not starts:
        raise ConfigurationError("No training windows: every sequence is empty")

    optimizer = Adam(network, AdamConfig(lr=config.lr))
    curves = {"train_loss": [], "train_accuracy": [], "val_loss": [], "val_accuracy": []}
    for epoch in range(config.epochs):
        order = rng.permutation(len(starts))
        losses, correct, seen = [], 0, 0
        for b in range(0, len(order), config.batch_size):
            batch = [starts[k] for k in order[b:b + config.batch_size]]
            csi = np.stack([sequences[i].planes[s:s + window] for i, s in batch])
            state = np.stack([sequences[i].states[s:s + window] for i, s in batch])
            target = np.stack([sequences[i].targets[s:s + window] for i, s in batch])

            logits, _, cache = network.forward(csi, state, train=True)
            probs = softmax(logits)
            loss, dlogits = cross_entropy(probs, target)
            grads, _ = network.backward(dlogits, cache)
            optimizer.step(grads)

            losses.append(loss)
            correct += int(np.sum(probs.argmax(-1) == target.argmax(-1)))
            seen += target.shape[0] * target.shape[1]

        curves["train_loss"].append(float(np.mean(losses)))
        curves["train_accuracy"].append(correct / seen)
        val_loss, val_acc = _validate_prediction(network, validation or [])
        curves["val_loss"].append(val_loss)
        curves["val_accuracy"].append(val_acc)
        logger.info(
            f"Training: {label} epoch {epoch + 1}/{config.epochs} loss {curves['train_loss'][-1]:.4f} "
            f"train acc {curves['train_accuracy'][-1]:.3f}"
            + (f" val acc {val_acc:.3f}" if val_acc is not None else "")
        )
    return curves


def _validate_prediction(network: PredictionNetwork, sequences: list[_Sequence]):
    """Loss and top-1 agreement over validation flights, each run from the zero LSTM state."""
    sequences = [s for s in sequences if len(s.planes)]
    if not sequences:
        return None, None
    probs = np.concatenate([sequence_probs(network, s.planes, s.states) for s in sequences])
    targets = np.concatenate([s.targets for s in sequences])
    loss, _ = cross_entropy(probs, targets)
    return float(loss), float(np.mean(probs.argmax(-1) == targets.argmax(-1)))


def _fit_evaluation(
    network: EvaluationNetwork,
    planes: np.ndarray,
    rssi: np.ndarray,
    targets: np.ndarray,
    config: TrainingConfig,
    rng: np.random.Generator,
    validation: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None,
) -> dict:
    optimizer = Adam(network, AdamConfig(lr=config.lr))
    curves = {"train_loss": [], "train_accuracy": [], "val_loss": [], "val_accuracy": []}
    for epoch in range(config.evaluation_epoch_count):
        order = rng.permutation(len(planes))
        losses, correct = [], 0
        for b in range(0, len(order), config.batch_size):
            idx = order[b:b + config.batch_size]
            logits, cache = network.forward(planes[idx], rssi[idx], train=True)
            probs = softmax(logits)
            loss, dlogits = cross_entropy(probs, targets[idx])
            grads, _ = network.backward(dlogits, cache)
            optimizer.step(grads)
            losses.append(loss)
            correct += int(np.sum(probs.argmax(-1) == targets[idx].argmax(-1)))

        curves["train_loss"].append(float(np.mean(losses)))
        curves["train_accuracy"].append(correct / len(planes))
        val_loss = val_acc = None
        if validation is not None and len(validation[0]):
            val_probs = _evaluation_probs(network, validation[0], validation[1])
            val_loss = float(cross_entropy(val_probs, validation[2])[0])
            val_acc = float(np.mean(val_probs.argmax(-1) == validation[2].argmax(-1)))
        curves["val_loss"].append(val_loss)
        curves["val_accuracy"].append(val_acc)
        logger.info(
            f"Training: evaluation epoch {epoch + 1}/{config.evaluation_epoch_count} loss {curves['train_loss'][-1]:.4f} "
            f"train acc {curves['train_accuracy'][-1]:.3f}"
            + (f" val acc {val_acc:.3f}" if val_acc is not None else "")
        )
    return curves


def _evaluation_probs(network: EvaluationNetwork, planes: np.ndarray, rssi: np.ndarray) -> np.ndarray:
    chunks = []
    for start in range(0, len(planes), ENCODE_CHUNK):
        logits, _ = network.forward(planes[start:start + ENCODE_CHUNK], rssi[start:start + ENCODE_CHUNK])
        chunks.append(softmax(logits))
    return np.concatenate(chunks)


def _split(trace: LabeledTrace, validation_split: float) -> tuple[LabeledTrace, LabeledTrace]:
    cut = len(trace) - int(round(len(trace) * validation_split))
    head = LabeledTrace(trace.samples[:cut], trace.environment_name, trace.metadata)
    tail = LabeledTrace(trace.samples[cut:], trace.environment_name, trace.metadata)
    return head, tail


def _prediction_sequence(planes, states, labels) -> _Sequence:
    """Inputs at n paired with the label of n + 1."""
    return _Sequence(planes[:-1], states[:-1], _one_hot(labels[1:]))


def train_offline(
    traces: Sequence[LabeledTrace],
    config: TrainingConfig = TrainingConfig(),
    network_config: NetworkConfig = NetworkConfig(),
) -> TrainingResult:
    """
    Train the prediction and evaluation networks on labeled traces.

    Every trace is split in time: the leading part trains, the trailing
    validation_split part validates. Standardization constants come from
    the training parts only.
    """
    traces = [t for t in traces if len(t)]
    if not traces:
        raise ConfigurationError("train_offline() needs at least one non-empty labeled trace")

    splits = [_split(t, config.validation_split) for t in traces]
    train_parts = [head for head, _ in splits if len(head) >= 2]
    if not train_parts:
        raise ConfigurationError("Training split leaves fewer than two frames per trace")
    standardizer = fit_standardizer(train_parts)
    rng = np.random.default_rng(config.seed)

    train_seqs, val_seqs = [], []
    eval_train, eval_val = [], []
    for head, tail in splits:
        if len(head) >= 2:
            planes, states, labels = featurize_trace(head, standardizer)
            if config.shuffle_labels:
                labels = rng.permutation(labels)
            train_seqs.append(_prediction_sequence(planes, states, labels))
            eval_train.append((planes, states[:, 3:4], _one_hot(labels)))
        if len(tail) >= 2:
            planes, states, labels = featurize_trace(tail, standardizer)
            val_seqs.append(_prediction_sequence(planes, states, labels))
            eval_val.append((planes, states[:, 3:4], _one_hot(labels)))

    prediction = PredictionNetwork(network_config)
    evaluation = EvaluationNetwork(network_config)
    logger.info(
        f"Training: {sum(len(s.planes) for s in train_seqs)} training and "
        f"{sum(len(s.planes) for s in val_seqs)} validation frames from {len(traces)} traces"
    )

    pred_curves = _fit_prediction(prediction, train_seqs, config, rng, val_seqs)
    stacked_val = tuple(np.concatenate(parts) for parts in zip(*eval_val)) if eval_val else None
    eval_curves = _fit_evaluation(
        evaluation,
        *(np.concatenate(parts) for parts in zip(*eval_train)),
        config,
        rng,
        stacked_val,
    )

    report = {
        "prediction": pred_curves,
        "evaluation": eval_curves,
        "frames": {
            "train": int(sum(len(s.planes) for s in train_seqs)),
            "validation": int(sum(len(s.planes) for s in val_seqs)),
        },
        "environments": sorted({t.environment_name for t in traces}),
        "training_config": asdict(config),
        "network_config": network_config.to_dict(),
    }
    return TrainingResult(prediction, evaluation, standardizer, report)


def _featurize_buffer(buffer, standardizer: Standardizer) -> tuple[np.ndarray, np.ndarray]:
    channels = [c for c, _ in buffer]
    planes = csi_planes(np.stack([c.csi for c in channels]))
    states = np.stack([state_vector(f, c.rssi) for c, f in buffer])
    return standardize(planes, states, standardizer)


def finetune_online(
    prediction: PredictionNetwork,
    evaluator: VirtualLabeler,
    buffer: Sequence[tuple[ChannelState, FlightState]],
    standardizer: Standardizer,
    config: OnlineConfig = OnlineConfig(),
) -> PredictionNetwork:
    """
    Cross-modal fine-tuning of the FC head on a copy of the prediction network.

    The input at frame n is matched against the virtual label W^E_{n+1}
    computed from the channel of frame n + 1. Extractor and LSTM parameters
    of the returned copy are identical to the input network; the input
    network itself is never modified.
    """
    if len(buffer) < 2:
        logger.warning(f"Training: fine-tune buffer holds {len(buffer)} samples, keeping current parameters")
        return prediction

    tuned = copy.deepcopy(prediction)
    planes, states = _featurize_buffer(buffer, standardizer)
    hs = encode_sequence(tuned, planes[:-1], states[:-1])
    targets = virtual_labels(evaluator, [c for c, _ in buffer[1:]], standardizer)

    rng = np.random.default_rng(config.seed)
    optimizer = Adam(tuned, AdamConfig(lr=config.lr))
    for epoch in range(config.epochs):
        order = rng.permutation(len(hs))
        losses = []
        for b in range(0, len(order), config.batch_size):
            idx = order[b:b + config.batch_size]
            logits, cache = tuned.head_forward(hs[idx], train=True)
            loss, dlogits = cross_entropy(softmax(logits), targets[idx])
            optimizer.step(tuned.head_backward(dlogits, cache))
            losses.append(loss)
        logger.debug(f"Training: fine-tune epoch {epoch + 1}/{config.epochs} loss {np.mean(losses):.4f}")

    logger.info(f"Training: fine-tuned FC layers on {len(hs)} buffered frames")
    return tuned


def retrain_from_scratch(
    buffer: Sequence[tuple[ChannelState, FlightState]],
    evaluator: VirtualLabeler,
    standardizer: Standardizer,
    network_config: NetworkConfig,
    config: OnlineConfig = OnlineConfig(),
) -> PredictionNetwork:
    """A fresh prediction network trained on the buffer alone, all layers, against virtual labels."""
    if len(buffer) < 2:
        raise ConfigurationError("retrain_from_scratch() needs at least two buffered samples")

    planes, states = _featurize_buffer(buffer, standardizer)
    targets = virtual_labels(evaluator, [c for c, _ in buffer[1:]], standardizer)
    sequence = _Sequence(planes[:-1], states[:-1], targets)

    network = PredictionNetwork(network_config)
    train_config = TrainingConfig(
        epochs=config.retrain_epochs,
        batch_size=config.batch_size,
        validation_split=0.0,
        seed=config.seed,
    )
    _fit_prediction(network, [sequence], train_config, np.random.default_rng(config.seed), label="retrain")
    return network
