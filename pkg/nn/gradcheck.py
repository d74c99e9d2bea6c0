"""Central finite-difference verification of analytic gradients"""
import logging

import numpy as np

logger = logging.getLogger(__name__)

DEFAULT_EPSILON = 1e-5
DENOMINATOR_FLOOR = 1e-4


class ProjectionModel:
    """
    Scalar projection loss sum(projection * f(x)) around a single layer or Sequential.

    With include_input the input itself is exposed as a parameter block named
    "input", so parameterless layers are checked through their input gradient.
    """

    def __init__(self, module, x: np.ndarray, projection: np.ndarray | None = None, include_input=False, seed=0):
        self.module = module
        self.x = np.array(x, dtype=float)
        self.include_input = include_input
        if projection is None:
            y, _ = module.forward(self.x, True)
            projection = np.random.default_rng(seed).normal(size=y.shape)
        self.projection = projection

    def parameters(self) -> dict[str, np.ndarray]:
        params = dict(self.module.parameters())
        if self.include_input:
            params["input"] = self.x
        return params

    def loss(self, inputs=None, target=None) -> float:
        y, _ = self.module.forward(self.x, True)
        return float(np.sum(self.projection * y))

    def loss_and_grads(self, inputs=None, target=None):
        y, cache = self.module.forward(self.x, True)
        dx, grads = self.module.backward(self.projection.copy(), cache)
        if self.include_input:
            grads = dict(grads, input=dx)
        return float(np.sum(self.projection * y)), grads


def relative_error(analytic: float, numeric: float, floor: float = DENOMINATOR_FLOOR) -> float:
    return abs(analytic - numeric) / max(abs(analytic) + abs(numeric), floor)


def gradient_check(
    model,
    inputs=None,
    target=None,
    epsilon: float = DEFAULT_EPSILON,
    fraction: float = 0.01,
    min_per_block: int = 50,
    seed: int = 0,
) -> float:
    """
    Worst relative error between analytic and central-difference gradients.

    `model` exposes parameters(), loss(inputs, target) and
    loss_and_grads(inputs, target). Each parameter block is sampled at
    `fraction` of its entries, at least `min_per_block` (or all of a smaller
    block). Parameters are restored exactly after every perturbation.
    """
    rng = np.random.default_rng(seed)
    _, analytic = model.loss_and_grads(inputs, target)
    params = model.parameters()

    worst = 0.0
    for name, block in params.items():
        grad = analytic.get(name, np.zeros_like(block))
        flat = block.reshape(-1)
        count = min(flat.size, max(min_per_block, int(np.ceil(fraction * flat.size))))
        for idx in rng.choice(flat.size, size=count, replace=False):
            original = flat[idx]
            flat[idx] = original + epsilon
            plus = model.loss(inputs, target)
            flat[idx] = original - epsilon
            minus = model.loss(inputs, target)
            flat[idx] = original
            numeric = (plus - minus) / (2 * epsilon)
            err = relative_error(float(grad.reshape(-1)[idx]), numeric)
            if err > worst:
                worst = err
                logger.debug(f"Gradcheck: {name}[{idx}] analytic {grad.reshape(-1)[idx]:.6e} numeric {numeric:.6e}")
    return worst
