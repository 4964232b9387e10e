"""Parameter update rules used by the training loops."""

from __future__ import annotations

import numpy as np

from .errors import ContractViolation

OPTIMIZERS = ("sgd", "adam")


class SGD:
    def __init__(self, n_params: int, lr: float):
        self.lr = lr

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        return params - self.lr * grad


class Adam:
    def __init__(self, n_params: int, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        mhat = self.m / (1 - self.beta1**self.t)
        vhat = self.v / (1 - self.beta2**self.t)
        return params - self.lr * mhat / (np.sqrt(vhat) + self.eps)


def make_optimizer(name: str, n_params: int, lr: float):
    if name == "sgd":
        return SGD(n_params, lr)
    if name == "adam":
        return Adam(n_params, lr)
    raise ContractViolation(f"unknown optimizer {name!r}")
