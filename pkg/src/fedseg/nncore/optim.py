"""In-place optimizers over a network's flat parameter buffer."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class SGD:
    lr: float = 1e-2
    momentum: float = 0.0
    velocity: np.ndarray | None = field(default=None, repr=False)

    def step(self, net) -> None:
        g = net.grads
        if self.momentum:
            if self.velocity is None:
                self.velocity = np.zeros_like(net.params)
            self.velocity *= self.momentum
            self.velocity += g
            g = self.velocity
        net.params -= net.dtype.type(self.lr) * g


@dataclass
class Adam:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: np.ndarray | None = field(default=None, repr=False)
    v: np.ndarray | None = field(default=None, repr=False)

    def step(self, net) -> None:
        if self.m is None:
            self.m = np.zeros_like(net.params)
            self.v = np.zeros_like(net.params)
        self.t += 1
        g = net.grads
        self.m *= self.beta1
        self.m += (1 - self.beta1) * g
        self.v *= self.beta2
        self.v += (1 - self.beta2) * g * g
        lr_t = self.lr * np.sqrt(1 - self.beta2 ** self.t) / (1 - self.beta1 ** self.t)
        net.params -= (lr_t * self.m / (np.sqrt(self.v) + self.eps)).astype(net.dtype)


def optimizer_step(opt, net) -> None:
    opt.step(net)
