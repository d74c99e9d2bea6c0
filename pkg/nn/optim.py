"""Adam optimizer"""
import logging
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class AdamState:
    """First/second moment estimates and step count per parameter name."""
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: dict[str, int] = field(default_factory=dict)


def optimizer_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    config: AdamConfig = AdamConfig(),
) -> dict[str, np.ndarray]:
    """
    One bias-corrected Adam update.

    Returns new arrays for the names present in `grads`; every other
    parameter is passed through untouched. `state` is updated in place.
    """
    updated = dict(params)
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"Gradient for unknown parameter {name}")
        if g.shape != params[name].shape:
            raise ValueError(f"Gradient shape {g.shape} does not match parameter {name} {params[name].shape}")

        m = state.m.get(name, np.zeros_like(g))
        v = state.v.get(name, np.zeros_like(g))
        t = state.t.get(name, 0) + 1
        m = config.beta1 * m + (1 - config.beta1) * g
        v = config.beta2 * v + (1 - config.beta2) * g * g
        m_hat = m / (1 - config.beta1 ** t)
        v_hat = v / (1 - config.beta2 ** t)
        updated[name] = params[name] - config.lr * m_hat / (np.sqrt(v_hat) + config.eps)
        state.m[name], state.v[name], state.t[name] = m, v, t
    return updated


class Adam:
    """Adam bound to one network; each step publishes the update through set_parameters()."""

    def __init__(self, network, config: AdamConfig = AdamConfig()):
        self.network = network
        self.config = config
        self.state = AdamState()

    def step(self, grads: dict[str, np.ndarray]):
        params = self.network.parameters()
        updated = optimizer_step(params, grads, self.state, self.config)
        self.network.set_parameters({name: updated[name] for name in grads})
