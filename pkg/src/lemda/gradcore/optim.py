"""SGD and Adam over an explicit, owned list of parameters."""

from __future__ import annotations

from typing import Iterable, Optional, Sequence

import numpy as np

from .tensor import ContractError, Tensor


class Optimizer:
    """Base optimizer. Only the registered parameters are ever touched."""

    kind = "base"

    def __init__(self, params: Iterable[Tensor], lr: float, names: Optional[Sequence[str]] = None):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.params = list(params)
        if len({id(p) for p in self.params}) != len(self.params):
            raise ValueError("parameter registered twice")
        self.names = list(names) if names is not None else [
            p.name or f"param[{i}]" for i, p in enumerate(self.params)
        ]
        self.lr = float(lr)
        self.step_count = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        for p, name in zip(self.params, self.names):
            if p.grad is None:
                raise ContractError(f"parameter {name!r} has no gradient")
        self.step_count += 1
        for i, p in enumerate(self.params):
            self._update(i, p)
        self.zero_grad()

    def _update(self, i: int, p: Tensor) -> None:
        raise NotImplementedError


class SGD(Optimizer):
    kind = "sgd"

    def _update(self, i, p):
        p.data -= self.lr * p.grad


class Adam(Optimizer):
    kind = "adam"

    def __init__(self, params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8, names=None):
        super().__init__(params, lr, names)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def _update(self, i, p):
        g = p.grad
        self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
        self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
        m_hat = self.m[i] / (1.0 - self.beta1 ** self.step_count)
        v_hat = self.v[i] / (1.0 - self.beta2 ** self.step_count)
        p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def make_optimizer(kind: str, params, lr: float, names=None) -> Optimizer:
    kind = kind.lower()
    if kind == "sgd":
        return SGD(params, lr, names)
    if kind == "adam":
        return Adam(params, lr, names=names)
    raise ValueError(f"unknown optimizer {kind!r}")
