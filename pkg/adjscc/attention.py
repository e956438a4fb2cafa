# -*- coding: utf-8 -*-
"""
Attention-feature (AF) module: channel-wise soft attention conditioned on the
channel SNR.

Feature maps are ``(N, c, h, w)``. For each map the module pools every
channel to a scalar, prepends the SNR in dB, predicts one factor per channel
with a two-layer network (ReLU then sigmoid) and rescales the channels by
those factors.
"""
from dataclasses import dataclass
from typing import Optional, Union

import torch
from torch import Tensor, nn

from adjscc.exceptions import AttentionError

SNR = Union[float, Tensor]


@dataclass
class AFParams:
    """
    Factor-prediction weights. ``w1`` is ``(c + 1, m)``, ``w2`` is ``(m, c)``.
    """

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @property
    def channels(self) -> int:
        return self.w2.shape[1]

    @property
    def hidden_width(self) -> int:
        return self.w1.shape[1]


def global_average_pool(features: Tensor) -> Tensor:
    return features.mean(dim=(-2, -1))


def snr_column(snr_db: SNR, batch: int, like: Tensor) -> Tensor:
    snr = torch.as_tensor(snr_db, dtype=like.dtype, device=like.device)
    if snr.dim() == 0:
        snr = snr.expand(batch)
    if snr.shape != (batch,):
        raise AttentionError(
            f"expected one SNR per example ({batch}), got shape {tuple(snr.shape)}"
        )
    return snr


def build_context(pooled: Tensor, snr_db: SNR) -> Tensor:
    """Context vectors ``[snr_db, pooled_1, ..., pooled_c]``, shape ``(N, c + 1)``."""
    if pooled.shape[-1] < 1:
        raise AttentionError("context needs at least one feature channel")
    snr = snr_column(snr_db, pooled.shape[0], pooled)
    return torch.cat([snr.unsqueeze(-1), pooled], dim=-1)


def predict_factors(context: Tensor, params: AFParams) -> Tensor:
    m = params.hidden_width
    c = params.channels
    if context.shape[-1] != params.w1.shape[0]:
        raise AttentionError(
            f"dimension mismatch: context has {context.shape[-1]} entries, "
            f"w1 expects {params.w1.shape[0]}"
        )
    if params.b1.shape != (m,) or params.w2.shape[0] != m or params.b2.shape != (c,):
        raise AttentionError("dimension mismatch between AF parameter arrays")
    if context.shape[-1] != c + 1:
        raise AttentionError(
            f"dimension mismatch: context has {context.shape[-1]} entries for "
            f"{c} channels"
        )
    hidden = torch.relu(context @ params.w1 + params.b1)
    return torch.sigmoid(hidden @ params.w2 + params.b2)


def recalibrate(features: Tensor, factors: Tensor) -> Tensor:
    if factors.shape[-1] != features.shape[-3]:
        raise AttentionError(
            f"length mismatch: {factors.shape[-1]} factors for "
            f"{features.shape[-3]} channels"
        )
    return features * factors.unsqueeze(-1).unsqueeze(-1)


def af_forward(features: Tensor, snr_db: SNR, params: AFParams) -> Tensor:
    context = build_context(global_average_pool(features), snr_db)
    return recalibrate(features, predict_factors(context, params))


class AttentionFeature(nn.Module):
    """
    AF module holding its own factor-prediction parameters. The factors of
    the latest forward pass are kept (detached) in ``scaling_factors``.
    """

    def __init__(self, channels: int, hidden_width: Optional[int] = None):
        super().__init__()
        if channels < 1:
            raise AttentionError("an AF module needs at least one channel")
        m = hidden_width or channels
        self.w1 = nn.Parameter(torch.empty(channels + 1, m))
        self.b1 = nn.Parameter(torch.zeros(m))
        self.w2 = nn.Parameter(torch.empty(m, channels))
        self.b2 = nn.Parameter(torch.zeros(channels))
        self.scaling_factors: Optional[Tensor] = None
        self.reset_parameters()

    def reset_parameters(self) -> None:
        nn.init.xavier_uniform_(self.w1)
        nn.init.xavier_uniform_(self.w2)
        nn.init.zeros_(self.b1)
        nn.init.zeros_(self.b2)

    @property
    def params(self) -> AFParams:
        return AFParams(w1=self.w1, b1=self.b1, w2=self.w2, b2=self.b2)

    def forward(self, features: Tensor, snr_db: SNR) -> Tensor:
        context = build_context(global_average_pool(features), snr_db)
        factors = predict_factors(context, self.params)
        self.scaling_factors = factors.detach()
        return recalibrate(features, factors)
