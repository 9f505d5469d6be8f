"""AdamW with decoupled weight decay."""

import numpy as np

from src.autodiff import Parameter


class AdamW:
    """Adam moments with bias correction and decoupled weight decay.

    Decay applies only to matrices (rank >= 2); biases, norm scales and mask
    tokens are left undecayed.
    """

    def __init__(
        self,
        params: list[Parameter],
        lr: float = 4e-4,
        betas: tuple[float, float] = (0.9, 0.95),
        weight_decay: float = 1e-5,
        eps: float = 1e-8,
    ):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.weight_decay = weight_decay
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, lr: float | None = None) -> None:
        """Apply one update; parameters without a gradient are only decayed."""
        lr = self.lr if lr is None else lr
        self.step_count += 1
        c1 = 1.0 - self.beta1**self.step_count
        c2 = 1.0 - self.beta2**self.step_count
        for p, m, v in zip(self.params, self.m, self.v):
            if p.ndim >= 2 and self.weight_decay > 0:
                p.data *= 1.0 - lr * self.weight_decay
            if p.grad is None:
                continue
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def global_grad_norm(self) -> float:
        total = sum(float((p.grad * p.grad).sum()) for p in self.params if p.grad is not None)
        return float(np.sqrt(total))
