"""Invertible building blocks: squeeze, 1x1 convolution, affine coupling."""
from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from ..errors import DesignError, ShapeError, SingularWeightError

MIN_ABS_DET = 1e-12


def squeeze(x, g: int):
    """Interleaved reshape ``(..., N) -> (..., g, N // g)``; channel c, frame t holds x[t*g + c]."""
    n = x.shape[-1]
    if n % g:
        raise ShapeError(f"length {n} not divisible by squeeze factor {g}")
    lead = tuple(x.shape[:-1])
    y = x.reshape(*lead, n // g, g)
    return y.transpose(-1, -2) if isinstance(y, torch.Tensor) else np.swapaxes(y, -1, -2)


def unsqueeze(z):
    g, t = z.shape[-2], z.shape[-1]
    lead = tuple(z.shape[:-2])
    if isinstance(z, torch.Tensor):
        return z.transpose(-1, -2).reshape(*lead, g * t)
    return np.swapaxes(z, -1, -2).reshape(*lead, g * t)


def squeeze_channels(x: torch.Tensor, g: int) -> torch.Tensor:
    """``(B, C, N) -> (B, C*g, N/g)``; each input channel squeezed separately."""
    b, c, n = x.shape
    return squeeze(x, g).reshape(b, c * g, n // g)


class Inv1x1(nn.Module):
    """Channel mixing by a learned invertible matrix, applied per frame."""

    def __init__(self, channels: int, dtype=None):
        super().__init__()
        w = torch.linalg.qr(torch.randn(channels, channels, dtype=torch.float64))[0]
        self.weight = nn.Parameter(w.to(dtype or torch.get_default_dtype()).contiguous())

    def _logabsdet(self):
        sign, logabs = torch.linalg.slogdet(self.weight.double())
        if sign == 0 or logabs < math.log(MIN_ABS_DET):
            raise SingularWeightError(
                f"1x1 weight |det| = {math.exp(float(logabs)) if sign != 0 else 0.0:.3e}"
                " below tolerance")
        return logabs

    def forward(self, x):
        logdet = x.shape[-1] * self._logabsdet()
        return torch.einsum("ij,bjt->bit", self.weight, x), logdet.expand(x.shape[0])

    def inverse(self, y):
        self._logabsdet()
        w_inv = torch.linalg.inv(self.weight.double()).to(y.dtype)
        return torch.einsum("ij,bjt->bit", w_inv, y)


class DSConv1d(nn.Module):
    """Depthwise-separable 1-D convolution with "same" zero padding."""

    def __init__(self, in_ch: int, out_ch: int, kernel_size: int = 3, dilation: int = 1):
        super().__init__()
        if kernel_size % 2 == 0:
            raise DesignError("kernel size must be odd for same padding")
        self.depthwise = nn.Conv1d(in_ch, in_ch, kernel_size, dilation=dilation,
                                   padding=dilation * (kernel_size - 1) // 2, groups=in_ch)
        self.pointwise = nn.Conv1d(in_ch, out_ch, 1)
        lecun_normal_(self.depthwise)
        lecun_normal_(self.pointwise)

    def forward(self, x):
        return self.pointwise(self.depthwise(x))


def lecun_normal_(conv: nn.Conv1d) -> nn.Conv1d:
    """Variance-preserving init: weights ~ N(0, 1/fan_in), zero bias."""
    fan_in = conv.weight.shape[1] * conv.weight.shape[2]
    with torch.no_grad():
        conv.weight.normal_(0.0, 1.0 / math.sqrt(fan_in))
        if conv.bias is not None:
            conv.bias.zero_()
    return conv


def gated_activation(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    return torch.tanh(a) * torch.sigmoid(b)


class CouplingSubnet(nn.Module):
    """WaveNet-style stack producing ``(log_s, t)`` for one half of the channels.

    The output projection starts at zero, so a fresh coupling is the identity.
    """

    def __init__(self, half: int, cond_channels: int, hidden: int = 128, n_layers: int = 8,
                 kernel_size: int = 3):
        super().__init__()
        self.half = half
        self.hidden = hidden
        self.n_layers = n_layers
        self.kernel_size = kernel_size
        self.start = nn.Conv1d(half, hidden, 1)
        self.cond = DSConv1d(cond_channels, 2 * hidden * n_layers, kernel_size)
        self.in_layers = nn.ModuleList(
            DSConv1d(hidden, 2 * hidden, kernel_size, dilation=2**i) for i in range(n_layers))
        self.res_skip = nn.ModuleList(
            nn.Conv1d(hidden, 2 * hidden if i < n_layers - 1 else hidden, 1)
            for i in range(n_layers))
        self.end = nn.Conv1d(hidden, 2 * half, 1)
        lecun_normal_(self.start)
        for layer in self.res_skip:
            lecun_normal_(layer)
        nn.init.zeros_(self.end.weight)
        nn.init.zeros_(self.end.bias)

    @property
    def receptive_field(self) -> int:
        k = self.kernel_size
        return 1 + (k - 1) * (2**self.n_layers - 1) + (k - 1)

    def forward(self, x_half, cond):
        if x_half.shape[1] != self.half or x_half.shape[-1] != cond.shape[-1]:
            raise ShapeError(
                f"subnet expects ({self.half}, T) input with matching cond frames, got "
                f"{tuple(x_half.shape)} and {tuple(cond.shape)}")
        h = self.hidden
        audio = self.start(x_half)
        cond_all = self.cond(cond)
        skip = 0
        for i, (in_layer, rs_layer) in enumerate(zip(self.in_layers, self.res_skip)):
            pre = in_layer(audio) + cond_all[:, 2 * h * i: 2 * h * (i + 1)]
            acts = gated_activation(pre[:, :h], pre[:, h:])
            rs = rs_layer(acts)
            if i < self.n_layers - 1:
                audio = audio + rs[:, :h]
                skip = skip + rs[:, h:]
            else:
                skip = skip + rs
        out = self.end(skip)
        return out[:, : self.half], out[:, self.half:]


class FlowBlock(nn.Module):
    """1x1 convolution followed by single or double affine coupling."""

    def __init__(self, g: int, cond_channels: int, mode: str = "double", hidden: int = 128,
                 n_layers: int = 8, kernel_size: int = 3):
        super().__init__()
        if g % 2:
            raise DesignError(f"squeeze factor must be even, got {g}")
        if mode not in ("single", "double"):
            raise DesignError(f"unknown coupling mode {mode!r}")
        self.mode = mode
        self.half = g // 2
        self.inv1x1 = Inv1x1(g)
        self.subnet_1 = CouplingSubnet(self.half, cond_channels, hidden, n_layers, kernel_size)
        self.subnet_2 = (CouplingSubnet(self.half, cond_channels, hidden, n_layers, kernel_size)
                         if mode == "double" else None)

    def coupling_forward(self, x, cond):
        x1, x2 = x[:, : self.half], x[:, self.half:]
        log_s1, t1 = self.subnet_1(x2, cond)
        y1 = torch.exp(log_s1) * x1 + t1
        logdet = log_s1.double().sum(dim=(1, 2))
        if self.subnet_2 is None:
            return torch.cat([y1, x2], dim=1), logdet
        log_s2, t2 = self.subnet_2(y1, cond)
        y2 = torch.exp(log_s2) * x2 + t2
        return torch.cat([y1, y2], dim=1), logdet + log_s2.double().sum(dim=(1, 2))

    def coupling_inverse(self, y, cond):
        y1, y2 = y[:, : self.half], y[:, self.half:]
        if self.subnet_2 is None:
            x2 = y2
        else:
            log_s2, t2 = self.subnet_2(y1, cond)
            x2 = (y2 - t2) * torch.exp(-log_s2)
        log_s1, t1 = self.subnet_1(x2, cond)
        x1 = (y1 - t1) * torch.exp(-log_s1)
        return torch.cat([x1, x2], dim=1)

    def forward(self, x, cond):
        x, ld_w = self.inv1x1(x)
        x, ld_c = self.coupling_forward(x, cond)
        return x, ld_w + ld_c

    def inverse(self, y, cond):
        return self.inv1x1.inverse(self.coupling_inverse(y, cond))
