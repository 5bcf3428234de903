"""Root-mean-square gradient propagation over named parameter arrays."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, ShapeError


class RmsProp:
    """Per-element update: v <- rho*v + (1-rho)*g^2; theta <- theta - lr*g/(sqrt(v)+eps).

    Accumulators start at zero and are created lazily per parameter name, so
    one optimizer instance can drive any dict of named arrays. Updates mutate
    the parameter arrays in place.
    """

    def __init__(self, learning_rate: float, rho: float = 0.9, epsilon: float = 1e-8):
        if learning_rate <= 0.0:
            raise ConfigError(f"learning rate must be positive, got {learning_rate}")
        if not 0.0 <= rho < 1.0:
            raise ConfigError(f"decay rho must be in [0, 1), got {rho}")
        if epsilon <= 0.0:
            raise ConfigError(f"epsilon must be positive, got {epsilon}")
        self.learning_rate = learning_rate
        self.rho = rho
        self.epsilon = epsilon
        self.accumulators: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        for name, value in params.items():
            if name not in grads:
                raise ShapeError(f"no gradient supplied for parameter {name!r}")
            grad = grads[name]
            if grad.shape != value.shape:
                raise ShapeError(
                    f"gradient shape {grad.shape} != parameter shape {value.shape} for {name!r}"
                )
            acc = self.accumulators.get(name)
            if acc is None:
                acc = self.accumulators[name] = np.zeros_like(value)
            acc *= self.rho
            acc += (1.0 - self.rho) * np.square(grad)
            value -= self.learning_rate * grad / (np.sqrt(acc) + self.epsilon)
