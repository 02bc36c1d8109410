"""Plain SGD and Adam over named float64 parameter arrays.

Parameters are registered once as a dict of arrays and updated in place, so
a complex tap array can be exposed through its float64 view and the model
sees every update immediately.  Complex gradients must be converted by the
caller to real pairs (2 Re g, 2 Im g) before reaching an optimizer; real
parameters pass their derivative through unchanged.
"""

from __future__ import annotations

import numpy as np

from .errors import ParameterError


def _check_grads(params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
    for name in grads:
        if name not in params:
            raise ParameterError(f"gradient for unregistered parameter {name!r}")
        if grads[name].shape != params[name].shape:
            raise ParameterError(
                f"gradient shape {grads[name].shape} does not match "
                f"parameter {name!r} shape {params[name].shape}"
            )


class SgdOptimizer:
    def __init__(self, params: dict[str, np.ndarray], learning_rate: float):
        if learning_rate < 0:
            raise ParameterError("learning rate must be non-negative")
        self.params = params
        self.learning_rate = learning_rate

    def step(self, grads: dict[str, np.ndarray]) -> None:
        _check_grads(self.params, grads)
        for name in sorted(grads):
            self.params[name] -= self.learning_rate * grads[name]


class AdamOptimizer:
    def __init__(
        self,
        params: dict[str, np.ndarray],
        learning_rate: float = 1e-4,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
    ):
        if learning_rate < 0:
            raise ParameterError("learning rate must be non-negative")
        if not (0 <= beta1 < 1 and 0 <= beta2 < 1):
            raise ParameterError("betas must lie in [0, 1)")
        self.params = params
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.t = 0
        self.m = {name: np.zeros_like(p) for name, p in params.items()}
        self.v = {name: np.zeros_like(p) for name, p in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        _check_grads(self.params, grads)
        self.t += 1
        bias1 = 1.0 - self.beta1**self.t
        bias2 = 1.0 - self.beta2**self.t
        for name in sorted(grads):
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            self.params[name] -= (
                self.learning_rate * (m / bias1) / (np.sqrt(v / bias2) + self.epsilon)
            )
