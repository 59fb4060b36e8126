"""Layer modules built on the hand-differentiated operators."""
import math
from typing import Optional

import torch
from torch import nn

from eyedentify.models.autograd import functional as EF


def _fan_in_uniform(shape, fan_in: int, generator: Optional[torch.Generator], device=None, dtype=None) -> torch.Tensor:
    t = torch.empty(shape, device=device, dtype=dtype)
    if t.device.type == "meta":
        return t
    bound = math.sqrt(6.0 / fan_in)
    return t.uniform_(-bound, bound, generator=generator)


class Conv1d(nn.Module):
    def __init__(
        self,
        in_channels: int,
        filters: int,
        kernel: int,
        padding: str = "valid",
        generator: Optional[torch.Generator] = None,
        device=None,
        dtype=None,
    ):
        super().__init__()
        self.padding = padding
        self.weight = nn.Parameter(
            _fan_in_uniform((kernel, in_channels, filters), kernel * in_channels, generator, device, dtype)
        )
        self.bias = nn.Parameter(torch.zeros(filters, device=device, dtype=dtype))

    def forward(self, x):
        return EF.conv1d(x, self.weight, self.bias, padding=self.padding)


class AvgPool1d(nn.Module):
    def __init__(self, size: int = 2, stride: int = 1):
        super().__init__()
        self.size = size
        self.stride = stride

    def forward(self, x):
        return EF.avgpool1d(x, self.size, self.stride)


class BatchNorm(nn.Module):
    def __init__(self, features: int, momentum: float = 0.99, eps: float = 1e-5, device=None, dtype=None):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.gamma = nn.Parameter(torch.ones(features, device=device, dtype=dtype))
        self.beta = nn.Parameter(torch.zeros(features, device=device, dtype=dtype))
        self.register_buffer("running_mean", torch.zeros(features, device=device, dtype=dtype))
        self.register_buffer("running_var", torch.ones(features, device=device, dtype=dtype))

    def forward(self, x):
        return EF.batchnorm(
            x, self.gamma, self.beta, self.running_mean, self.running_var,
            training=self.training, momentum=self.momentum, eps=self.eps,
        )


class ReLU(nn.Module):
    def forward(self, x):
        return EF.relu(x)


class Flatten(nn.Module):
    def forward(self, x):
        return EF.flatten(x)


class Dense(nn.Module):
    def __init__(
        self,
        in_features: int,
        out_features: int,
        generator: Optional[torch.Generator] = None,
        device=None,
        dtype=None,
    ):
        super().__init__()
        self.weight = nn.Parameter(
            _fan_in_uniform((in_features, out_features), in_features, generator, device, dtype)
        )
        self.bias = nn.Parameter(torch.zeros(out_features, device=device, dtype=dtype))

    def forward(self, x):
        return EF.dense(x, self.weight, self.bias)


def parameter_count(module: nn.Module) -> int:
    """Trainable parameters; batch-norm gamma/beta included, running statistics not."""
    return sum(p.numel() for p in module.parameters())
