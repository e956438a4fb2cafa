# -*- coding: utf-8 -*-
"""
Feature-learning building blocks: generalized divisive normalization and the
FL module (convolution or transposed convolution, GDN or IGDN, activation).
"""
from dataclasses import dataclass
from enum import Enum

import torch
import torch.nn.functional as F
from torch import Tensor, nn
from torch.nn.utils import parametrize

from adjscc.exceptions import ArchitectureError, ShapeError

GDN_BETA_FLOOR = 1e-6
GDN_GAMMA_INIT = 0.1


class Direction(str, Enum):
    DOWN = "down"
    UP = "up"


class Activation(str, Enum):
    PRELU = "prelu"
    SIGMOID = "sigmoid"
    NONE = "none"


@dataclass(frozen=True)
class LayerSpec:
    """
    One FL module: ``kernel_size x kernel_size x filters | stride``.
    """

    kernel_size: int
    filters: int
    stride: int
    direction: Direction
    activation: Activation = Activation.PRELU

    def __post_init__(self) -> None:
        object.__setattr__(self, "direction", Direction(self.direction))
        object.__setattr__(self, "activation", Activation(self.activation))
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ArchitectureError(
                f"kernel size must be odd and positive, got {self.kernel_size}"
            )
        if self.filters < 1 or self.stride < 1:
            raise ArchitectureError("filter count and stride must be positive")


def _check_gdn_params(beta: Tensor, gamma: Tensor) -> None:
    if bool((beta <= 0).any()):
        raise ArchitectureError("GDN beta must be strictly positive")
    if bool((gamma < 0).any()):
        raise ArchitectureError("GDN gamma must be non-negative")
    c = beta.shape[0]
    if gamma.shape != (c, c):
        raise ArchitectureError(
            f"GDN gamma must be {c}x{c}, got {tuple(gamma.shape)}"
        )


def _gdn_energy(x: Tensor, beta: Tensor, gamma: Tensor) -> Tensor:
    _check_gdn_params(beta, gamma)
    # beta_i + sum_j gamma_ij x_j^2 at every position, as a 1x1 convolution.
    return F.conv2d(x * x, gamma.unsqueeze(-1).unsqueeze(-1), beta)


def gdn_forward(x: Tensor, beta: Tensor, gamma: Tensor) -> Tensor:
    return x * torch.rsqrt(_gdn_energy(x, beta, gamma))


def igdn_forward(x: Tensor, beta: Tensor, gamma: Tensor) -> Tensor:
    return x * torch.sqrt(_gdn_energy(x, beta, gamma))


class Positive(nn.Module):
    """
    Parametrization mapping an unconstrained tensor to ``softplus(raw) + floor``.
    """

    def __init__(self, floor: float = 0.0):
        super().__init__()
        self.floor = floor

    def forward(self, raw: Tensor) -> Tensor:
        return F.softplus(raw) + self.floor

    def right_inverse(self, value: Tensor) -> Tensor:
        v = (value - self.floor).clamp_min(1e-8)
        return v + torch.log(-torch.expm1(-v))


class GDN(nn.Module):
    def __init__(self, channels: int, inverse: bool = False):
        super().__init__()
        self.inverse = inverse
        self.beta = nn.Parameter(torch.ones(channels))
        self.gamma = nn.Parameter(GDN_GAMMA_INIT * torch.eye(channels))
        parametrize.register_parametrization(self, "beta", Positive(GDN_BETA_FLOOR))
        parametrize.register_parametrization(self, "gamma", Positive())

    def forward(self, x: Tensor) -> Tensor:
        if self.inverse:
            return igdn_forward(x, self.beta, self.gamma)
        return gdn_forward(x, self.beta, self.gamma)


class FLModule(nn.Module):
    """
    Convolution with "same" padding (or its transposed counterpart), GDN on the
    encoder side or IGDN on the decoder side, then PReLU, sigmoid or nothing.
    """

    def __init__(self, in_channels: int, layer: LayerSpec):
        super().__init__()
        self.layer = layer
        padding = (layer.kernel_size - 1) // 2
        self.conv: nn.Module
        if layer.direction is Direction.DOWN:
            self.conv = nn.Conv2d(
                in_channels,
                layer.filters,
                layer.kernel_size,
                stride=layer.stride,
                padding=padding,
            )
        else:
            self.conv = nn.ConvTranspose2d(
                in_channels,
                layer.filters,
                layer.kernel_size,
                stride=layer.stride,
                padding=padding,
                output_padding=layer.stride - 1,
            )
        self.norm = GDN(layer.filters, inverse=layer.direction is Direction.UP)
        self.activation: nn.Module
        if layer.activation is Activation.PRELU:
            self.activation = nn.PReLU(layer.filters)
        elif layer.activation is Activation.SIGMOID:
            self.activation = nn.Sigmoid()
        else:
            self.activation = nn.Identity()

    def forward(self, x: Tensor) -> Tensor:
        stride = self.layer.stride
        if self.layer.direction is Direction.DOWN and (
            x.shape[-2] % stride or x.shape[-1] % stride
        ):
            raise ShapeError(
                f"spatial size {x.shape[-2]}x{x.shape[-1]} must be a multiple of "
                f"{stride}"
            )
        return self.activation(self.norm(self.conv(x)))
