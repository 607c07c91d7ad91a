"""Adam with L2 weight decay on selected parameters."""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np

from .const import DEFAULT_ADAM_BETA1, DEFAULT_ADAM_BETA2, DEFAULT_ADAM_EPS, DEFAULT_WEIGHT_DECAY
from .model import Parameter


class Adam:
    """Adam; the decay term ``weight_decay * w`` is added to the gradient of decayed parameters."""

    def __init__(
        self,
        params: Sequence[Parameter],
        weight_decay: float = DEFAULT_WEIGHT_DECAY,
        beta1: float = DEFAULT_ADAM_BETA1,
        beta2: float = DEFAULT_ADAM_BETA2,
        eps: float = DEFAULT_ADAM_EPS,
    ) -> None:
        """Initialize zero moment estimates."""
        self.params = list(params)
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.steps = 0
        self._m = [np.zeros_like(p.tensor.data) for p in self.params]
        self._v = [np.zeros_like(p.tensor.data) for p in self.params]

    def zero_grad(self) -> None:
        """Clear every parameter gradient."""
        for param in self.params:
            param.tensor.zero_grad()

    def step(self, lr: float) -> None:
        """Apply one update; parameters without a gradient are left alone."""
        self.steps += 1
        bias1 = 1.0 - self.beta1**self.steps
        bias2 = 1.0 - self.beta2**self.steps
        for param, m, v in zip(self.params, self._m, self._v, strict=True):
            grad = param.tensor.grad
            if grad is None:
                continue
            if param.decay and self.weight_decay:
                grad = grad + self.weight_decay * param.tensor.data
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad * grad
            param.tensor.data -= lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)
