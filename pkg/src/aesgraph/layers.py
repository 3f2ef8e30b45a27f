"""Parameterized building blocks shared by the model components.

Every block exposes ``named_params(prefix)`` (trainable tensors) and
``named_state(prefix)`` (non-trainable running statistics); names are
slash-joined so the whole model flattens into one registry for the
optimizer and checkpoints.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .tensor import BatchNormState, Tensor


def he_normal(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape)


class Conv2d:
    def __init__(self, rng, cin: int, cout: int, k: int,
                 stride: int = 1, dilation: int = 1, padding: int = 0):
        self.stride, self.dilation, self.padding = stride, dilation, padding
        self.weight = Tensor(he_normal(rng, (cout, cin, k, k), cin * k * k),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(cout), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, stride=self.stride,
                        dilation=self.dilation, padding=self.padding)

    def named_params(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}/weight": self.weight, f"{prefix}/bias": self.bias}

    def named_state(self, prefix: str) -> dict:
        return {}


class BatchNorm2d:
    def __init__(self, channels: int):
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        self.state = BatchNormState(channels)

    def forward(self, x: Tensor, mode: str) -> Tensor:
        return T.batchnorm(x, self.gamma, self.beta, self.state, mode)

    def named_params(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}/gamma": self.gamma, f"{prefix}/beta": self.beta}

    def named_state(self, prefix: str) -> dict[str, BatchNormState]:
        return {prefix: self.state}


class PreActConv:
    """Pre-activation unit: batchnorm, ReLU, then convolution."""

    def __init__(self, rng, cin: int, cout: int, k: int,
                 stride: int = 1, dilation: int = 1, padding: int = 0):
        self.bn = BatchNorm2d(cin)
        self.conv = Conv2d(rng, cin, cout, k, stride=stride,
                           dilation=dilation, padding=padding)

    def forward(self, x: Tensor, mode: str) -> Tensor:
        return self.conv.forward(T.relu(self.bn.forward(x, mode)))

    def named_params(self, prefix: str) -> dict[str, Tensor]:
        out = self.bn.named_params(f"{prefix}/bn")
        out.update(self.conv.named_params(f"{prefix}/conv"))
        return out

    def named_state(self, prefix: str) -> dict:
        return self.bn.named_state(f"{prefix}/bn")


class Linear:
    def __init__(self, rng, cin: int, cout: int):
        self.weight = Tensor(he_normal(rng, (cin, cout), cin), requires_grad=True)
        self.bias = Tensor(np.zeros(cout), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return T.add(T.matmul(x, self.weight), self.bias)

    def named_params(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}/weight": self.weight, f"{prefix}/bias": self.bias}

    def named_state(self, prefix: str) -> dict:
        return {}


def collect_params(modules: dict) -> dict[str, Tensor]:
    out: dict[str, Tensor] = {}
    for prefix, module in modules.items():
        out.update(module.named_params(prefix))
    return out


def collect_state(modules: dict) -> dict:
    out: dict = {}
    for prefix, module in modules.items():
        out.update(module.named_state(prefix))
    return out
