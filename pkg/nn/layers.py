"""
Layers with explicit forward/backward passes.

Every layer follows the same contract:

    y, cache = layer.forward(x, train)
    dx, grads = layer.backward(dy, cache)

`grads` is keyed by qualified parameter name ("conv0.w"), the same keys
`layer.parameters()` returns. Arrays are float64 throughout.
"""
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from sources.base import ConfigurationError

GROUPS = ("extractor", "lstm", "fc")


@dataclass(frozen=True)
class LayerSpec:
    """Descriptor of one layer, written into checkpoint manifests."""
    kind: str
    name: str
    group: str
    options: dict = field(default_factory=dict)


class Layer:
    kind = "layer"

    def __init__(self, name: str, group: str = "extractor"):
        if group not in GROUPS:
            raise ConfigurationError(f"Layer {name}: unknown parameter group {group}")
        self.name = name
        self.group = group
        self.params: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def parameters(self) -> dict[str, np.ndarray]:
        return {f"{self.name}.{k}": v for k, v in self.params.items()}

    def spec(self) -> LayerSpec:
        return LayerSpec(self.kind, self.name, self.group, self._options())

    def _options(self) -> dict:
        return {}

    def _grads(self, **grads) -> dict[str, np.ndarray]:
        return {f"{self.name}.{k}": v for k, v in grads.items()}

    def forward(self, x: np.ndarray, train: bool = False):
        raise NotImplementedError

    def backward(self, dy: np.ndarray, cache):
        raise NotImplementedError


def _glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, shape)


class Conv1d(Layer):
    """1-D convolution over subcarriers with 'same' padding: (N, C_in, L) -> (N, C_out, L)."""
    kind = "conv1d"

    def __init__(self, name, in_channels, out_channels, kernel_size, rng, group="extractor"):
        super().__init__(name, group)
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.params["w"] = _glorot(
            rng, (out_channels, in_channels, kernel_size), in_channels * kernel_size, out_channels * kernel_size
        )
        self.params["b"] = np.zeros(out_channels)

    def _options(self):
        return {"in_channels": self.in_channels, "out_channels": self.out_channels, "kernel_size": self.kernel_size}

    def _padding(self) -> tuple[int, int]:
        left = (self.kernel_size - 1) // 2
        return left, self.kernel_size - 1 - left

    def forward(self, x, train=False):
        if x.ndim != 3 or x.shape[1] != self.in_channels:
            raise ConfigurationError(
                f"Layer {self.name}: expected (N, {self.in_channels}, L) input, got {x.shape}"
            )
        left, right = self._padding()
        padded = np.pad(x, ((0, 0), (0, 0), (left, right)))
        windows = sliding_window_view(padded, self.kernel_size, axis=2)  # (N, C, L, K)
        y = np.tensordot(windows, self.params["w"], axes=([1, 3], [1, 2])).transpose(0, 2, 1)
        return y + self.params["b"][None, :, None], (windows, x.shape)

    def backward(self, dy, cache):
        windows, x_shape = cache
        w = self.params["w"]
        dw = np.tensordot(dy, windows, axes=([0, 2], [0, 2]))
        db = dy.sum(axis=(0, 2))

        length = x_shape[2]
        left, _ = self._padding()
        dcols = np.tensordot(dy, w, axes=([1], [0]))  # (N, L, C, K)
        dpadded = np.zeros((x_shape[0], x_shape[1], length + self.kernel_size - 1))
        for k in range(self.kernel_size):
            dpadded[:, :, k:k + length] += dcols[:, :, :, k].transpose(0, 2, 1)
        return dpadded[:, :, left:left + length], self._grads(w=dw, b=db)


class BatchNorm(Layer):
    """
    Batch normalization over every axis except the channel axis 1.

    Train mode normalizes with batch statistics and updates the running
    statistics; infer mode uses the running statistics only.
    """
    kind = "batchnorm"

    def __init__(self, name, channels, group="extractor", momentum=0.1, eps=1e-5):
        super().__init__(name, group)
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.params["gamma"] = np.ones(channels)
        self.params["beta"] = np.zeros(channels)
        self.buffers["running_mean"] = np.zeros(channels)
        self.buffers["running_var"] = np.ones(channels)

    def _options(self):
        return {"channels": self.channels, "momentum": self.momentum, "eps": self.eps}

    @staticmethod
    def _axes(x) -> tuple[int, ...]:
        return (0,) + tuple(range(2, x.ndim))

    def _broadcast(self, v, x):
        return v.reshape((1, self.channels) + (1,) * (x.ndim - 2))

    def forward(self, x, train=False):
        if x.ndim < 2 or x.shape[1] != self.channels:
            raise ConfigurationError(f"Layer {self.name}: expected {self.channels} channels, got {x.shape}")
        axes = self._axes(x)
        if train:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            m = self.momentum
            self.buffers["running_mean"][:] = (1 - m) * self.buffers["running_mean"] + m * mean
            self.buffers["running_var"][:] = (1 - m) * self.buffers["running_var"] + m * var
        else:
            mean = self.buffers["running_mean"].copy()
            var = self.buffers["running_var"].copy()

        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - self._broadcast(mean, x)) * self._broadcast(inv_std, x)
        y = xhat * self._broadcast(self.params["gamma"], x) + self._broadcast(self.params["beta"], x)
        return y, (xhat, inv_std, train)

    def backward(self, dy, cache):
        xhat, inv_std, train = cache
        axes = self._axes(dy)
        dgamma = (dy * xhat).sum(axis=axes)
        dbeta = dy.sum(axis=axes)
        dxhat = dy * self._broadcast(self.params["gamma"], dy)
        scale = self._broadcast(inv_std, dy)
        if not train:
            return dxhat * scale, self._grads(gamma=dgamma, beta=dbeta)

        count = dy.size // self.channels
        sum_dxhat = self._broadcast(dxhat.sum(axis=axes), dy)
        sum_dxhat_xhat = self._broadcast((dxhat * xhat).sum(axis=axes), dy)
        dx = scale / count * (count * dxhat - sum_dxhat - xhat * sum_dxhat_xhat)
        return dx, self._grads(gamma=dgamma, beta=dbeta)


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, train=False):
        mask = x > 0
        return x * mask, mask

    def backward(self, dy, cache):
        return dy * cache, {}


class MaxPool1d(Layer):
    """Non-overlapping max pooling along the last axis; a trailing odd element is dropped."""
    kind = "maxpool1d"

    def __init__(self, name, size=2, group="extractor"):
        super().__init__(name, group)
        self.size = size

    def _options(self):
        return {"size": self.size}

    def forward(self, x, train=False):
        n, c, length = x.shape
        out = length // self.size
        blocks = x[:, :, :out * self.size].reshape(n, c, out, self.size)
        idx = blocks.argmax(axis=-1)
        y = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
        return y, (idx, x.shape)

    def backward(self, dy, cache):
        idx, x_shape = cache
        n, c, length = x_shape
        out = dy.shape[-1]
        blocks = np.zeros((n, c, out, self.size))
        np.put_along_axis(blocks, idx[..., None], dy[..., None], axis=-1)
        dx = np.zeros(x_shape)
        dx[:, :, :out * self.size] = blocks.reshape(n, c, out * self.size)
        return dx, {}


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x, train=False):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, dy, cache):
        return dy.reshape(cache), {}


class Dense(Layer):
    """Fully connected layer over the last axis; leading axes are batch/time."""
    kind = "dense"

    def __init__(self, name, in_features, out_features, rng, group="fc"):
        super().__init__(name, group)
        self.in_features = in_features
        self.out_features = out_features
        self.params["w"] = _glorot(rng, (in_features, out_features), in_features, out_features)
        self.params["b"] = np.zeros(out_features)

    def _options(self):
        return {"in_features": self.in_features, "out_features": self.out_features}

    def forward(self, x, train=False):
        if x.shape[-1] != self.in_features:
            raise ConfigurationError(
                f"Layer {self.name}: expected {self.in_features} input features, got {x.shape[-1]}"
            )
        return x @ self.params["w"] + self.params["b"], x

    def backward(self, dy, cache):
        x = cache
        flat_x = x.reshape(-1, self.in_features)
        flat_dy = dy.reshape(-1, self.out_features)
        dw = flat_x.T @ flat_dy
        db = flat_dy.sum(axis=0)
        return dy @ self.params["w"].T, self._grads(w=dw, b=db)


class LSTM(Layer):
    """
    Single LSTM layer over (N, T, F) sequences, gate order input, forget, cell, output.

    forward() takes an optional (h0, c0) and returns the hidden sequence plus the
    final state inside the cache; backward() runs full BPTT over the T steps.
    """
    kind = "lstm"

    def __init__(self, name, input_size, hidden_size, rng, group="lstm", forget_bias=1.0):
        super().__init__(name, group)
        self.input_size = input_size
        self.hidden_size = hidden_size
        h = hidden_size
        self.params["w"] = _glorot(rng, (input_size + h, 4 * h), input_size + h, h)
        self.params["b"] = np.zeros(4 * h)
        self.params["b"][h:2 * h] = forget_bias

    def _options(self):
        return {"input_size": self.input_size, "hidden_size": self.hidden_size}

    def zero_state(self, batch: int) -> tuple[np.ndarray, np.ndarray]:
        return np.zeros((batch, self.hidden_size)), np.zeros((batch, self.hidden_size))

    def forward(self, x, train=False, state=None):
        if x.ndim != 3 or x.shape[-1] != self.input_size:
            raise ConfigurationError(
                f"Layer {self.name}: expected (N, T, {self.input_size}) input, got {x.shape}"
            )
        n, steps, _ = x.shape
        hsz = self.hidden_size
        h, c = state if state is not None else self.zero_state(n)
        w, b = self.params["w"], self.params["b"]

        hs = np.empty((n, steps, hsz))
        steps_cache = []
        for t in range(steps):
            concat = np.concatenate([x[:, t], h], axis=1)
            z = concat @ w + b
            i = expit(z[:, :hsz])
            f = expit(z[:, hsz:2 * hsz])
            g = np.tanh(z[:, 2 * hsz:3 * hsz])
            o = expit(z[:, 3 * hsz:])
            c_prev = c
            c = f * c_prev + i * g
            tanh_c = np.tanh(c)
            h = o * tanh_c
            hs[:, t] = h
            steps_cache.append((concat, i, f, g, o, c_prev, tanh_c))
        return hs, (steps_cache, (h, c))

    def backward(self, dy, cache, dstate=None):
        """Returns (dx, grads) like every layer; the initial-state gradient is in self.last_dstate."""
        steps_cache, _ = cache
        n, steps, hsz = dy.shape
        w = self.params["w"]
        dw = np.zeros_like(w)
        db = np.zeros_like(self.params["b"])
        dx = np.empty((n, steps, self.input_size))

        dh_next, dc_next = dstate if dstate is not None else (np.zeros((n, hsz)), np.zeros((n, hsz)))
        for t in reversed(range(steps)):
            concat, i, f, g, o, c_prev, tanh_c = steps_cache[t]
            dh = dy[:, t] + dh_next
            do = dh * tanh_c
            dc = dc_next + dh * o * (1.0 - tanh_c ** 2)
            dz = np.concatenate([
                dc * g * i * (1.0 - i),
                dc * c_prev * f * (1.0 - f),
                dc * i * (1.0 - g ** 2),
                do * o * (1.0 - o),
            ], axis=1)
            dw += concat.T @ dz
            db += dz.sum(axis=0)
            dconcat = dz @ w.T
            dx[:, t] = dconcat[:, :self.input_size]
            dh_next = dconcat[:, self.input_size:]
            dc_next = dc * f
        self.last_dstate = (dh_next, dc_next)
        return dx, self._grads(w=dw, b=db)


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def _check_distribution(p: np.ndarray, what: str):
    if np.any(p < 0) or not np.all(np.abs(p.sum(axis=-1) - 1.0) <= 1e-6):
        raise ValueError(f"{what} must be non-negative and sum to 1 within 1e-6")


def cross_entropy(probs: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """
    Mean negative log-likelihood over the leading axes.

    `target` is one-hot or a soft distribution. The returned gradient is with
    respect to the pre-softmax logits: (p - target) / rows.
    """
    probs = np.asarray(probs, dtype=float)
    target = np.asarray(target, dtype=float)
    if probs.shape != target.shape:
        raise ValueError(f"Probability shape {probs.shape} does not match target shape {target.shape}")
    _check_distribution(probs, "Probabilities")
    _check_distribution(target, "Target")

    rows = max(probs.size // probs.shape[-1], 1)
    loss = -float(np.sum(target * np.log(np.maximum(probs, 1e-12)))) / rows
    return loss, (probs - target) / rows
