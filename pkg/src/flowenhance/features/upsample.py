"""Learned frame-to-sample upsampling for Mel conditioning."""
from __future__ import annotations

import math

import numpy as np
import torch
from torch import nn

from ..errors import ShapeError
from .featuremap import FeatureMap


class MelUpsampler(nn.Module):
    """Per-channel transposed convolution with stride ``hop`` and kernel ``2*hop``.

    Initialized to a nearest-neighbour stencil (frame ``i`` of the padded input
    fills samples ``[i*hop, (i+1)*hop)``), so a constant map upsamples to a
    constant signal. Frames are edge-padded on the left by ``fft_size/(2*hop)``
    so each frame lands near its window center, and on the right until the
    output covers ``target_len``.
    """

    def __init__(self, n_channels: int = 80, hop: int = 128, fft_size: int = 512):
        super().__init__()
        self.hop = hop
        self.lead = fft_size // (2 * hop)
        self.conv = nn.ConvTranspose1d(n_channels, n_channels, 2 * hop, stride=hop,
                                       groups=n_channels)
        with torch.no_grad():
            self.conv.weight.zero_()
            self.conv.weight[:, :, :hop] = 1.0
            self.conv.bias.zero_()

    def forward(self, mel: torch.Tensor, target_len: int) -> torch.Tensor:
        frames = mel.shape[-1]
        if frames < 1:
            raise ShapeError("empty feature map")
        need = max(math.ceil(target_len / self.hop), frames + self.lead)
        tail = need - frames - self.lead
        padded = torch.cat(
            [mel[..., :1].expand(*mel.shape[:-1], self.lead), mel,
             mel[..., -1:].expand(*mel.shape[:-1], tail)], dim=-1)
        out = self.conv(padded)
        return out[..., :target_len]


def upsample_features(fm: FeatureMap, target_len: int, upsampler: MelUpsampler) -> FeatureMap:
    if fm.kind != "mel":
        raise ShapeError("only mel feature maps are upsampled")
    if target_len < fm.frames:
        raise ShapeError("target length shorter than the frame count")
    param = next(upsampler.parameters())
    x = torch.tensor(fm.data, dtype=param.dtype)[None]
    with torch.no_grad():
        y = upsampler(x, target_len)[0]
    return FeatureMap(y.double().numpy(), fm.frame_rate * upsampler.hop, "mel")
