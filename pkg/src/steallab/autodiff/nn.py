"""Layer objects that own named :class:`Parameter` s."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import functional as F
from .tensor import Parameter, Tensor


class Module:
    training: bool = True

    def forward(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward(x)

    def _own_params(self) -> list[Parameter]:
        return []

    def children(self) -> list["Module"]:
        return []

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for p in self._own_params():
            yield prefix + p.name, p
        for i, child in enumerate(self.children()):
            yield from child.named_parameters(f"{prefix}{i}.")

    def parameters(self, trainable_only: bool = True) -> list[Parameter]:
        return [p for _, p in self.named_parameters() if p.trainable or not trainable_only]

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for child in self.children():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters(trainable_only=False):
            p.grad = None


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, bias: bool = True):
        bound = np.sqrt(6.0 / in_features)
        self.weight = Parameter(rng.uniform(-bound, bound, (out_features, in_features)), "weight")
        self.bias = Parameter(np.zeros(out_features), "bias") if bias else None

    def _own_params(self):
        return [self.weight] + ([self.bias] if self.bias is not None else [])

    def forward(self, x):
        return F.linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int, rng: np.random.Generator,
                 padding: int = 0, bias: bool = True):
        fan_in = in_ch * kernel * kernel
        bound = np.sqrt(6.0 / fan_in)
        self.weight = Parameter(rng.uniform(-bound, bound, (out_ch, in_ch, kernel, kernel)), "weight")
        self.bias = Parameter(np.zeros(out_ch), "bias") if bias else None
        self.padding = padding

    def _own_params(self):
        return [self.weight] + ([self.bias] if self.bias is not None else [])

    def forward(self, x):
        return F.conv2d(x, self.weight, self.bias, padding=self.padding)


class BatchNorm(Module):
    """Batch normalization for (N, F) or (N, C, H, W) inputs."""

    def __init__(self, features: int, momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = Parameter(np.ones(features), "gamma")
        self.beta = Parameter(np.zeros(features), "beta")
        self.running_mean = Parameter(np.zeros(features), "running_mean", trainable=False)
        self.running_var = Parameter(np.ones(features), "running_var", trainable=False)
        self.momentum = momentum
        self.eps = eps

    def _own_params(self):
        return [self.gamma, self.beta, self.running_mean, self.running_var]

    def forward(self, x):
        return F.batch_norm(x, self.gamma, self.beta, self.running_mean.data, self.running_var.data,
                            self.training, self.momentum, self.eps)


class Upsample(Module):
    def __init__(self, factor: int = 2, mode: str = "nearest"):
        self.factor = factor
        self.mode = mode

    def forward(self, x):
        return F.upsample(x, self.factor, self.mode)


class ReLU(Module):
    def forward(self, x):
        return F.relu(x)


class Tanh(Module):
    def forward(self, x):
        return F.tanh(x)


class MaxPool2d(Module):
    def __init__(self, size: int = 2):
        self.size = size

    def forward(self, x):
        return F.max_pool2d(x, self.size)


class Flatten(Module):
    def forward(self, x):
        return F.flatten(x)


class Reshape(Module):
    def __init__(self, *shape: int):
        self.shape = shape

    def forward(self, x):
        return x.reshape((x.shape[0],) + self.shape)


class Sequential(Module):
    def __init__(self, *layers: Module):
        self.layers = list(layers)

    def children(self):
        return self.layers

    def forward(self, x):
        for layer in self.layers:
            x = layer(x)
        return x
