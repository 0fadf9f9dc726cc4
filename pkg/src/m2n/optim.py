"""Adam optimizer over named parameter tensors."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class OptimError(RuntimeError):
    """Optimizer invoked with missing gradients or bad hyperparameters."""


class Adam:
    """Standard bias-corrected Adam (Kingma & Ba 2015).

    Moments are float32 buffers shaped like their parameters; the shared
    step count increments once per :meth:`step` call.
    """

    def __init__(
        self,
        named_params: list[tuple[str, Tensor]],
        lr: float = 5e-4,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        if lr < 0:
            raise OptimError(f"lr must be >= 0, got {lr}")
        if not 0 <= beta1 < 1 or not 0 <= beta2 < 1:
            raise OptimError(f"betas must be in [0, 1), got {beta1}, {beta2}")
        if eps <= 0:
            raise OptimError(f"eps must be > 0, got {eps}")
        self.params = list(named_params)
        if not self.params:
            raise OptimError("no parameters to optimize")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {name: np.zeros(p.shape, dtype=np.float32) for name, p in self.params}
        self.v = {name: np.zeros(p.shape, dtype=np.float32) for name, p in self.params}

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None

    def step(self) -> None:
        """Apply one update; every parameter must hold a gradient."""
        for name, p in self.params:
            if p.grad is None:
                raise OptimError(f"missing gradient for parameter {name}")
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for name, p in self.params:
            g = p.grad.astype(np.float32)
            m = self.m[name]
            v = self.v[name]
            m[...] = self.beta1 * m + (1.0 - self.beta1) * g
            v[...] = self.beta2 * v + (1.0 - self.beta2) * (g * g)
            m_hat = m / bc1
            v_hat = v / bc2
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
