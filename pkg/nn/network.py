"""
Prediction and evaluation networks.

PredictionNetwork: per-frame CSI extractor, concatenated with the state
vector (d, v, a, rssi), two stacked LSTM layers and a two-layer FC head
producing 8 logits per time step.

EvaluationNetwork: the same extractor shape, concatenated with rssi only,
and a two-layer FC head. It carries no recurrent state.

Parameters are grouped as extractor / lstm / fc so online fine-tuning can
address the FC group alone.
"""
import logging
from dataclasses import dataclass

import numpy as np

from nn.layers import (
    GROUPS,
    LSTM,
    BatchNorm,
    Conv1d,
    Dense,
    Flatten,
    Layer,
    MaxPool1d,
    ReLU,
    cross_entropy,
    softmax,
)
from sources.base import N_SUBCARRIERS, ConfigurationError

logger = logging.getLogger(__name__)

N_CLASSES = 8
STATE_FEATURES = 4

LstmState = list[tuple[np.ndarray, np.ndarray]]


class StaleCacheError(RuntimeError):
    """backward() was handed a cache produced before the parameters last changed."""


@dataclass(frozen=True)
class NetworkConfig:
    """
    Layer sizes for both networks.

    Attributes:
        conv_channels: Output channels of the three extractor convolutions.
        kernel_sizes: Kernel size of each convolution.
        pooled: Whether a 2x max pool follows each convolution.
        lstm_hidden: Hidden size of every LSTM layer.
        lstm_layers: Number of stacked LSTM layers.
        fc_hidden: Width of the prediction head's hidden FC layer.
        eval_hidden: Width of the evaluation head's hidden FC layer.
        n_subcarriers: CSI length.
        seed: Initialization seed.
    """
    conv_channels: tuple[int, ...] = (16, 32, 32)
    kernel_sizes: tuple[int, ...] = (5, 5, 3)
    pooled: tuple[bool, ...] = (True, True, False)
    lstm_hidden: int = 64
    lstm_layers: int = 2
    fc_hidden: int = 32
    eval_hidden: int = 64
    n_subcarriers: int = N_SUBCARRIERS
    seed: int = 0

    def __post_init__(self):
        if not len(self.conv_channels) == len(self.kernel_sizes) == len(self.pooled):
            raise ConfigurationError("conv_channels, kernel_sizes and pooled must have equal length")
        if min(self.conv_channels + self.kernel_sizes) < 1 or self.lstm_layers < 1:
            raise ConfigurationError("Layer sizes must be positive")
        if min(self.lstm_hidden, self.fc_hidden, self.eval_hidden) < 1:
            raise ConfigurationError("Hidden sizes must be positive")
        if self.extractor_length < 1:
            raise ConfigurationError(f"{self.n_subcarriers} subcarriers are pooled away entirely")

    @property
    def extractor_length(self) -> int:
        length = self.n_subcarriers
        for pooled in self.pooled:
            if pooled:
                length //= 2
        return length

    @property
    def extractor_features(self) -> int:
        return self.conv_channels[-1] * self.extractor_length

    @classmethod
    def from_dict(cls, data: dict | None) -> "NetworkConfig":
        data = dict(data or {})
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"Unknown network settings: {', '.join(sorted(unknown))}")
        for key in ("conv_channels", "kernel_sizes", "pooled"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(**data)

    def to_dict(self) -> dict:
        return {
            "conv_channels": list(self.conv_channels),
            "kernel_sizes": list(self.kernel_sizes),
            "pooled": list(self.pooled),
            "lstm_hidden": self.lstm_hidden,
            "lstm_layers": self.lstm_layers,
            "fc_hidden": self.fc_hidden,
            "eval_hidden": self.eval_hidden,
            "n_subcarriers": self.n_subcarriers,
            "seed": self.seed,
        }


class Sequential:
    def __init__(self, layers: list[Layer]):
        self.layers = layers

    def parameters(self) -> dict[str, np.ndarray]:
        params = {}
        for layer in self.layers:
            params.update(layer.parameters())
        return params

    def forward(self, x, train=False):
        caches = []
        for layer in self.layers:
            x, cache = layer.forward(x, train)
            caches.append(cache)
        return x, caches

    def backward(self, dy, caches):
        grads = {}
        for layer, cache in zip(reversed(self.layers), reversed(caches)):
            dy, layer_grads = layer.backward(dy, cache)
            grads.update(layer_grads)
        return dy, grads


def build_extractor(config: NetworkConfig, rng: np.random.Generator) -> Sequential:
    layers: list[Layer] = []
    in_channels = 2
    for i, (out_channels, kernel, pooled) in enumerate(
        zip(config.conv_channels, config.kernel_sizes, config.pooled)
    ):
        layers += [
            Conv1d(f"conv{i}", in_channels, out_channels, kernel, rng),
            BatchNorm(f"bn{i}", out_channels),
            ReLU(f"relu{i}"),
        ]
        if pooled:
            layers.append(MaxPool1d(f"pool{i}"))
        in_channels = out_channels
    layers.append(Flatten("flatten"))
    return Sequential(layers)


@dataclass
class ForwardCache:
    version: int
    train: bool
    parts: dict


class _Network:
    """Shared parameter bookkeeping: grouping, versioning, manifests."""

    def __init__(self, config: NetworkConfig):
        self.config = config
        self.version = 0

    def layers(self) -> list[Layer]:
        raise NotImplementedError

    def parameters(self) -> dict[str, np.ndarray]:
        params = {}
        for layer in self.layers():
            params.update(layer.parameters())
        return params

    def partition(self) -> dict[str, str]:
        return {f"{layer.name}.{k}": layer.group for layer in self.layers() for k in layer.params}

    def group_names(self, group: str) -> list[str]:
        if group not in GROUPS:
            raise ConfigurationError(f"Unknown parameter group: {group}")
        return [name for name, g in self.partition().items() if g == group]

    def buffers(self) -> dict[str, np.ndarray]:
        return {f"{layer.name}.{k}": v for layer in self.layers() for k, v in layer.buffers.items()}

    def manifest(self) -> list[dict]:
        return [
            {"kind": s.kind, "name": s.name, "group": s.group, "options": s.options}
            for s in (layer.spec() for layer in self.layers())
        ]

    def set_parameters(self, values: dict[str, np.ndarray]):
        """Copy new values into the live arrays; any outstanding forward cache becomes stale."""
        params = self.parameters()
        for name, value in values.items():
            if name not in params:
                raise ConfigurationError(f"Unknown parameter {name}")
            if params[name].shape != np.shape(value):
                raise ConfigurationError(
                    f"Parameter {name}: expected shape {params[name].shape}, got {np.shape(value)}"
                )
            np.copyto(params[name], value)
        self.version += 1

    def set_buffers(self, values: dict[str, np.ndarray]):
        buffers = self.buffers()
        for name, value in values.items():
            if name not in buffers or buffers[name].shape != np.shape(value):
                raise ConfigurationError(f"Buffer {name} does not match the network layout")
            np.copyto(buffers[name], value)

    def _check_cache(self, cache: ForwardCache):
        if cache.version != self.version:
            raise StaleCacheError(
                f"Forward cache from parameter version {cache.version}, network is at {self.version}"
            )

    def _extract(self, csi: np.ndarray, train: bool):
        """Run the extractor over any leading batch/time axes: (..., 2, L) -> (..., features)."""
        lead = csi.shape[:-2]
        if csi.shape[-2:] != (2, self.config.n_subcarriers):
            raise ConfigurationError(
                f"Layer conv0: expected CSI planes (2, {self.config.n_subcarriers}), got {csi.shape[-2:]}"
            )
        feats, cache = self.extractor.forward(csi.reshape((-1,) + csi.shape[-2:]), train)
        return feats.reshape(lead + (feats.shape[-1],)), cache


class PredictionNetwork(_Network):
    """P(C_n, S_n): sequences of (CSI planes, state vector) to next-frame MCS logits."""

    def __init__(self, config: NetworkConfig = NetworkConfig()):
        super().__init__(config)
        rng = np.random.default_rng(config.seed)
        self.extractor = build_extractor(config, rng)
        self.lstm = []
        in_size = config.extractor_features + STATE_FEATURES
        for i in range(config.lstm_layers):
            self.lstm.append(LSTM(f"lstm{i}", in_size, config.lstm_hidden, rng))
            in_size = config.lstm_hidden
        self.head = Sequential([
            Dense("fc0", config.lstm_hidden, config.fc_hidden, rng),
            ReLU("fc_relu", group="fc"),
            Dense("fc1", config.fc_hidden, N_CLASSES, rng),
        ])

    def layers(self) -> list[Layer]:
        return self.extractor.layers + self.lstm + self.head.layers

    def initial_state(self, batch: int = 1) -> LstmState:
        return [layer.zero_state(batch) for layer in self.lstm]

    def _encode(self, csi, state_vec, lstm_state, train):
        if csi.ndim != 4 or state_vec.ndim != 3 or csi.shape[:2] != state_vec.shape[:2]:
            raise ConfigurationError(
                f"Expected CSI (N, T, 2, L) and state (N, T, {STATE_FEATURES}), got {csi.shape} and {state_vec.shape}"
            )
        if state_vec.shape[-1] != STATE_FEATURES:
            raise ConfigurationError(f"State vector must have {STATE_FEATURES} features, got {state_vec.shape[-1]}")
        feats, ext_cache = self._extract(csi, train)
        x = np.concatenate([feats, state_vec], axis=-1)
        lstm_state = lstm_state or self.initial_state(csi.shape[0])
        lstm_caches, new_state = [], []
        for layer, state in zip(self.lstm, lstm_state):
            x, cache = layer.forward(x, train, state)
            lstm_caches.append(cache)
            new_state.append(cache[1])
        return x, new_state, {"extractor": ext_cache, "lstm": lstm_caches, "feature_size": feats.shape[-1]}

    def encode(self, csi, state_vec, lstm_state: LstmState | None = None):
        """Hidden sequence feeding the FC head, in infer mode: (N, T, hidden) and the final LSTM state."""
        hs, new_state, _ = self._encode(csi, state_vec, lstm_state, train=False)
        return hs, new_state

    def forward(self, csi, state_vec, lstm_state: LstmState | None = None, train: bool = False):
        """(N, T, 2, L) CSI and (N, T, 4) state -> (N, T, 8) logits, final LSTM state, cache."""
        hs, new_state, parts = self._encode(csi, state_vec, lstm_state, train)
        logits, head_cache = self.head.forward(hs, train)
        parts["head"] = head_cache
        return logits, new_state, ForwardCache(self.version, train, parts)

    def backward(self, dlogits, cache: ForwardCache):
        """Gradients of every parameter block plus (dcsi, dstate) input gradients."""
        self._check_cache(cache)
        parts = cache.parts
        dx, grads = self.head.backward(dlogits, parts["head"])
        for layer, layer_cache in zip(reversed(self.lstm), reversed(parts["lstm"])):
            dx, layer_grads = layer.backward(dx, layer_cache)
            grads.update(layer_grads)
        feature_size = parts["feature_size"]
        dfeats, dstate = dx[..., :feature_size], dx[..., feature_size:]
        n, t = dfeats.shape[:2]
        dcsi, ext_grads = self.extractor.backward(dfeats.reshape(n * t, -1), parts["extractor"])
        grads.update(ext_grads)
        return grads, (dcsi.reshape((n, t) + dcsi.shape[1:]), dstate)

    def head_forward(self, hs, train: bool = False):
        logits, cache = self.head.forward(hs, train)
        return logits, ForwardCache(self.version, train, {"head": cache})

    def head_backward(self, dlogits, cache: ForwardCache) -> dict[str, np.ndarray]:
        self._check_cache(cache)
        _, grads = self.head.backward(dlogits, cache.parts["head"])
        return grads

    def loss_and_grads(self, inputs, target, train: bool = True):
        csi, state_vec = inputs
        logits, _, cache = self.forward(csi, state_vec, train=train)
        loss, dlogits = cross_entropy(softmax(logits), target)
        grads, _ = self.backward(dlogits, cache)
        return loss, grads

    def loss(self, inputs, target, train: bool = True) -> float:
        csi, state_vec = inputs
        logits, _, _ = self.forward(csi, state_vec, train=train)
        return cross_entropy(softmax(logits), target)[0]


class EvaluationNetwork(_Network):
    """E(C_n): CSI planes plus rssi to current-frame MCS logits, no flight state and no recurrence."""

    def __init__(self, config: NetworkConfig = NetworkConfig()):
        super().__init__(config)
        rng = np.random.default_rng(config.seed + 1)
        self.extractor = build_extractor(config, rng)
        self.head = Sequential([
            Dense("efc0", config.extractor_features + 1, config.eval_hidden, rng),
            ReLU("efc_relu", group="fc"),
            Dense("efc1", config.eval_hidden, N_CLASSES, rng),
        ])

    def layers(self) -> list[Layer]:
        return self.extractor.layers + self.head.layers

    def forward(self, csi, rssi, train: bool = False):
        """(N, 2, L) CSI and (N, 1) standardized rssi -> (N, 8) logits and cache."""
        if rssi.ndim != 2 or rssi.shape != (csi.shape[0], 1):
            raise ConfigurationError(f"Expected rssi of shape ({csi.shape[0]}, 1), got {rssi.shape}")
        feats, ext_cache = self._extract(csi, train)
        logits, head_cache = self.head.forward(np.concatenate([feats, rssi], axis=-1), train)
        parts = {"extractor": ext_cache, "head": head_cache, "feature_size": feats.shape[-1]}
        return logits, ForwardCache(self.version, train, parts)

    def backward(self, dlogits, cache: ForwardCache):
        self._check_cache(cache)
        parts = cache.parts
        dx, grads = self.head.backward(dlogits, parts["head"])
        dcsi, ext_grads = self.extractor.backward(dx[:, :parts["feature_size"]], parts["extractor"])
        grads.update(ext_grads)
        return grads, (dcsi, dx[:, parts["feature_size"]:])

    def loss_and_grads(self, inputs, target, train: bool = True):
        logits, cache = self.forward(*inputs, train=train)
        loss, dlogits = cross_entropy(softmax(logits), target)
        grads, _ = self.backward(dlogits, cache)
        return loss, grads

    def loss(self, inputs, target, train: bool = True) -> float:
        logits, _ = self.forward(*inputs, train=train)
        return cross_entropy(softmax(logits), target)[0]
