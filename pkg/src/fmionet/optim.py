"""Adaptive-moment optimizer with bias correction."""
from __future__ import annotations

import numpy as np

from .tensor import Tensor


class Adam:
    """Standard first/second-moment update with bias correction.

    Moment buffers shape-match their parameters; the step counter advances by
    one per ``step`` call. Parameters whose grad is unset are skipped (their
    moments still decay toward zero on later updates with gradients).
    """

    def __init__(self, params: list[Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            if g.shape != p.data.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {p.data.shape}")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)

    # -- checkpoint plumbing -------------------------------------------------
    def state_buffers(self) -> list[np.ndarray]:
        return self.m + self.v

    def load_state_buffers(self, buffers: list[np.ndarray]) -> None:
        n = len(self.params)
        if len(buffers) != 2 * n:
            raise ValueError(f"expected {2 * n} moment buffers, got {len(buffers)}")
        for i in range(n):
            self.m[i][...] = buffers[i]
            self.v[i][...] = buffers[n + i]

    def state_scalars(self) -> dict:
        return {"t": self.t, "lr": self.lr, "beta1": self.beta1,
                "beta2": self.beta2, "eps": self.eps}

    def load_state_scalars(self, d: dict) -> None:
        self.t = int(d["t"])
        self.lr = float(d["lr"])
        self.beta1 = float(d["beta1"])
        self.beta2 = float(d["beta2"])
        self.eps = float(d["eps"])
