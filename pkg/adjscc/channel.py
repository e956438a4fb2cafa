# -*- coding: utf-8 -*-
"""
Channel model: complex symbol packing, per-block power normalization, AWGN and
equalized block fading.

Symbol blocks are complex tensors whose last dimension holds the ``k``
symbols of one transmission; leading dimensions index independent blocks
(usually one per image). Noise power is the total variance per complex
symbol, ``sigma^2 = 10^(-snr_db/10)``, split evenly over the real and
imaginary parts.
"""
import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Union

import numpy as np
import torch
from torch import Tensor, nn

from adjscc.exceptions import ChannelError
from adjscc.rng import rng_stream

SNR = Union[float, Tensor]


class ChannelMode(str, Enum):
    AWGN = "awgn"
    EQUALIZED_FADING = "equalized_fading"


@dataclass(frozen=True)
class ChannelConfig:
    snr_db: float
    seed: int = 0
    mode: ChannelMode = ChannelMode.AWGN

    def __post_init__(self) -> None:
        # Accept the plain string form used in experiment documents.
        object.__setattr__(self, "mode", ChannelMode(self.mode))

    @property
    def noise_power(self) -> float:
        return snr_to_noise_power(self.snr_db)


def pack_complex(values: Tensor) -> Tensor:
    """
    Pairs consecutive reals of the last dimension into complex symbols:
    ``symbol[i] = values[2i] + j * values[2i + 1]``.
    """
    if values.shape[-1] % 2 != 0:
        raise ChannelError("odd real dimension")
    pairs = values.reshape(*values.shape[:-1], values.shape[-1] // 2, 2)
    return torch.view_as_complex(pairs.contiguous())


def unpack_complex(symbols: Tensor) -> Tensor:
    reals = torch.view_as_real(symbols)
    return reals.reshape(*symbols.shape[:-1], symbols.shape[-1] * 2)


def _block_energy(symbols: Tensor) -> Tensor:
    return torch.view_as_real(symbols).pow(2).sum(dim=(-1, -2))


def average_power(symbols: Tensor) -> Tensor:
    """Mean of ``|z_i|^2`` over each block."""
    return _block_energy(symbols) / symbols.shape[-1]


def power_normalize(raw: Tensor) -> Tensor:
    """
    Scales every block to unit average power: ``raw * sqrt(k / sum |raw_i|^2)``.
    """
    energy = _block_energy(raw)
    if bool((energy == 0).any()):
        raise ChannelError("zero-power block")
    k = raw.shape[-1]
    scale = torch.sqrt(k / energy)
    return raw * scale.unsqueeze(-1)


def snr_to_noise_power(snr_db: float) -> float:
    return 10.0 ** (-snr_db / 10.0)


def noise_power_tensor(snr_db: SNR, like: Tensor) -> Tensor:
    """
    Noise power for a scalar SNR or one SNR per block, shaped to broadcast
    against the symbol blocks in ``like``.
    """
    real_dtype = like.real.dtype if like.is_complex() else like.dtype
    snr = torch.as_tensor(snr_db, dtype=real_dtype, device=like.device)
    power = torch.pow(10.0, -snr / 10.0)
    return power.reshape(power.shape + (1,) * (like.dim() - power.dim()))


def complex_gaussian(
    shape: torch.Size, generator: torch.Generator, like: Tensor
) -> Tensor:
    """Unit-variance circularly symmetric complex Gaussian samples."""
    real_dtype = like.real.dtype if like.is_complex() else like.dtype
    pairs = torch.randn(*shape, 2, generator=generator, dtype=real_dtype)
    samples = torch.view_as_complex(pairs) * math.sqrt(0.5)
    return samples.to(like.device)


def add_noise(z: Tensor, noise_power: Tensor, generator: torch.Generator) -> Tensor:
    omega = complex_gaussian(z.shape, generator, z)
    return z + omega * torch.sqrt(noise_power)


def awgn_transmit(
    z: Tensor, cfg: ChannelConfig, generator: Optional[torch.Generator] = None
) -> Tensor:
    """
    Returns ``z + omega`` with ``omega ~ CN(0, sigma^2 I)``. Without an explicit
    generator the noise is drawn from a stream seeded by ``cfg.seed``, so two
    calls with the same config are bit-identical.
    """
    if generator is None:
        generator = rng_stream(cfg.seed, "channel")
    return add_noise(z, noise_power_tensor(cfg.snr_db, z), generator)


def fading_transmit_equalized(
    z: Tensor,
    gain: Union[complex, Tensor],
    cfg: ChannelConfig,
    generator: Optional[torch.Generator] = None,
) -> Tensor:
    """
    Block fading ``h z + omega`` followed by zero-forcing equalization at the
    receiver, i.e. ``z + omega / h``. ``gain`` is one complex value or one per
    block.
    """
    h = torch.as_tensor(gain, dtype=z.dtype, device=z.device)
    if bool((h == 0).any()):
        raise ChannelError("channel in deep fade")
    if generator is None:
        generator = rng_stream(cfg.seed, "channel")
    h = h.reshape(h.shape + (1,) * (z.dim() - h.dim()))
    omega = complex_gaussian(z.shape, generator, z)
    omega = omega * torch.sqrt(noise_power_tensor(cfg.snr_db, z))
    # Equalized form of (h z + omega) / h.
    return z + omega / h


def sample_rayleigh_gain(
    blocks: int, generator: torch.Generator, like: Tensor
) -> Tensor:
    """One ``CN(0, 1)`` gain per block."""
    return complex_gaussian(torch.Size([blocks]), generator, like)


def empirical_snr_db(z: Tensor, z_hat: Tensor) -> float:
    signal = float(average_power(z).mean())
    noise = float(average_power(z_hat - z).mean())
    return 10.0 * math.log10(signal / noise)


class Channel(nn.Module):
    """
    Differentiable channel layer owning one named, seedable noise stream.
    The stream advances on every call; a single instance must not be shared
    between concurrent callers.
    """

    def __init__(
        self,
        mode: Union[ChannelMode, str] = ChannelMode.AWGN,
        seed: int = 0,
        name: str = "channel",
    ):
        super().__init__()
        self.mode = ChannelMode(mode)
        self.seed = seed
        self.name = name
        self.generator = rng_stream(seed, name)

    def reset(self) -> None:
        self.generator = rng_stream(self.seed, self.name)

    def forward(self, z: Tensor, snr_db: SNR) -> Tensor:
        noise_power = noise_power_tensor(snr_db, z)
        if self.mode is ChannelMode.AWGN:
            return add_noise(z, noise_power, self.generator)
        omega = complex_gaussian(z.shape, self.generator, z) * torch.sqrt(noise_power)
        blocks = int(np.prod(z.shape[:-1])) if z.dim() > 1 else 1
        h = sample_rayleigh_gain(blocks, self.generator, z).reshape(
            *z.shape[:-1], 1
        )
        # Zero gain cannot be equalized.
        h = torch.where(h == 0, torch.ones_like(h), h)
        return z + omega / h
