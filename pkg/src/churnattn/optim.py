"""Adam optimizer over autograd tensors."""

from __future__ import annotations

import numpy as np

from .autograd import Tensor
from .exceptions import GraphError


class Adam:
    """Standard Adam with bias correction.

    Moment buffers are allocated for exactly the tensors handed in at
    construction; updates are applied in that fixed order.
    """

    def __init__(
        self,
        params: list[Tensor],
        learning_rate: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
    ):
        if not (0.0 < beta1 < 1.0 and 0.0 < beta2 < 1.0):
            raise ValueError("betas must lie in (0, 1)")
        if epsilon <= 0.0 or learning_rate <= 0.0:
            raise ValueError("epsilon and learning_rate must be positive")
        self.params = list(params)
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.step_count = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        """Apply one bias-corrected update, then clear all grads."""
        for i, p in enumerate(self.params):
            if p.grad is None:
                raise GraphError(
                    f"adam step: parameter {i} (shape {p.data.shape}) has no grad"
                )
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1**t
        bc2 = 1.0 - b2**t
        for p, m, v in zip(self.params, self._m, self._v):
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p.data -= self.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + self.epsilon)
        self.zero_grad()

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
