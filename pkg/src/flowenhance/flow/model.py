"""Conditional flow model mapping clean speech to Gaussian noise given noisy speech."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch import nn

from ..audio import Waveform
from ..errors import DesignError, ShapeError
from ..features.apg import ApgConfig, apg_analyze, design_apg
from ..features.mel import MelConfig, mel_spectrogram
from ..features.upsample import MelUpsampler
from .layers import DSConv1d, FlowBlock, squeeze, squeeze_channels, unsqueeze

COND_KINDS = ("time", "mel", "apg")


@dataclass
class FlowConfig:
    n_blocks: int = 16
    g: int = 12
    mode: str = "double"
    cond_kind: str = "time"
    hidden: int = 128
    n_layers: int = 8
    kernel_size: int = 3
    cond_channels: int = 16
    sample_rate: int = 16000
    mel: dict = field(default_factory=dict)
    apg: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.cond_kind not in COND_KINDS:
            raise DesignError(f"unknown cond kind {self.cond_kind!r}")
        if self.mode not in ("single", "double"):
            raise DesignError(f"unknown coupling mode {self.mode!r}")
        if self.g < 2 or self.g % 2:
            raise DesignError("squeeze factor must be even and >= 2")
        for name in ("n_blocks", "hidden", "n_layers", "cond_channels"):
            if getattr(self, name) < 1:
                raise DesignError(f"{name} must be positive")

    @property
    def mel_config(self) -> MelConfig:
        return MelConfig(**self.mel)

    @property
    def apg_config(self) -> ApgConfig:
        return ApgConfig(**self.apg)

    @property
    def feature_channels(self) -> int:
        if self.cond_kind == "time":
            return 1
        if self.cond_kind == "mel":
            return self.mel_config.n_bands
        return self.apg_config.n_bands

    def to_dict(self) -> dict:
        return asdict(self)


class CondFrontEnd(nn.Module):
    """Featurize, bring to sample rate, squeeze by G and project with one DS conv."""

    def __init__(self, cfg: FlowConfig):
        super().__init__()
        self.cfg = cfg
        self.g = cfg.g
        self.upsampler = None
        if cfg.cond_kind == "mel":
            mc = cfg.mel_config
            self.upsampler = MelUpsampler(mc.n_bands, mc.hop, mc.fft_size)
        self.project = DSConv1d(cfg.feature_channels * cfg.g, cfg.cond_channels, cfg.kernel_size)
        self._apg = None

    @property
    def filterbank(self):
        if self._apg is None:
            self._apg = design_apg(self.cfg.apg_config, self.cfg.sample_rate)
        return self._apg

    def featurize(self, cond_raw) -> torch.Tensor:
        """Non-learned part of the conditional path: ``(B, N)`` -> ``(B, C, frames)``."""
        cond = np.atleast_2d(np.array(cond_raw, dtype=np.float64))
        kind = self.cfg.cond_kind
        if kind == "time":
            feats = cond[:, None, :]
        elif kind == "mel":
            mc = self.cfg.mel_config
            feats = np.stack([mel_spectrogram(mc, Waveform(c, self.cfg.sample_rate)).data
                              for c in cond])
        else:
            fb = self.filterbank
            feats = np.stack([apg_analyze(fb, Waveform(c, self.cfg.sample_rate)).data
                              for c in cond])
        return torch.as_tensor(feats, dtype=self.project.pointwise.weight.dtype)

    def forward(self, feats: torch.Tensor, n_samples: int) -> torch.Tensor:
        if self.upsampler is not None:
            feats = self.upsampler(feats, n_samples)
        if feats.shape[-1] != n_samples:
            raise ShapeError(f"conditional length {feats.shape[-1]} != signal length {n_samples}")
        return self.project(squeeze_channels(feats, self.g))


class FlowModel(nn.Module):
    def __init__(self, cfg: FlowConfig):
        super().__init__()
        self.cfg = cfg
        self.g = cfg.g
        self.cond_net = CondFrontEnd(cfg)
        self.blocks = nn.ModuleList(
            FlowBlock(cfg.g, cfg.cond_channels, cfg.mode, cfg.hidden, cfg.n_layers,
                      cfg.kernel_size)
            for _ in range(cfg.n_blocks))

    @classmethod
    def build(cls, cfg: FlowConfig, seed: int = 0, dtype=torch.float32) -> "FlowModel":
        # construct in the target dtype so f64 models get an exactly orthogonal init
        prev = torch.get_default_dtype()
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            torch.set_default_dtype(dtype)
            try:
                model = cls(cfg)
            finally:
                torch.set_default_dtype(prev)
        return model

    @property
    def dtype(self):
        return self.blocks[0].inv1x1.weight.dtype

    def featurize(self, cond_raw) -> torch.Tensor:
        return self.cond_net.featurize(cond_raw)

    def forward(self, x: torch.Tensor, feats: torch.Tensor):
        """Map clean audio ``(B, N)`` to ``z`` ``(B, G, N/G)`` plus per-item log-determinant."""
        cond = self.cond_net(feats, x.shape[-1])
        z = squeeze(x, self.g)
        logdet = torch.zeros(x.shape[0], dtype=torch.float64, device=x.device)
        for block in self.blocks:
            z, ld = block(z, cond)
            logdet = logdet + ld
        return z, logdet

    def inverse(self, z: torch.Tensor, feats: torch.Tensor) -> torch.Tensor:
        cond = self.cond_net(feats, z.shape[-2] * z.shape[-1])
        x = z
        for block in reversed(self.blocks):
            x = block.inverse(x, cond)
        return unsqueeze(x)


def _as_batch(x, dtype):
    if isinstance(x, Waveform):
        x = x.samples
    t = torch.as_tensor(np.array(x), dtype=dtype)
    return t[None] if t.ndim == 1 else t


def flow_forward(model: FlowModel, x, cond_raw):
    """Waveform-level forward pass; returns ``(z, total_logdet)`` for one item."""
    xb = _as_batch(x, model.dtype)
    cond = cond_raw.samples if isinstance(cond_raw, Waveform) else cond_raw
    if np.shape(cond)[-1] != xb.shape[-1]:
        raise ShapeError("x and conditional input lengths differ")
    z, logdet = model(xb, model.featurize(cond))
    return z[0], float(logdet[0])


def flow_inverse(model: FlowModel, z, cond_raw) -> Waveform:
    zb = torch.as_tensor(z, dtype=model.dtype)
    if zb.ndim == 2:
        zb = zb[None]
    rate = cond_raw.sample_rate if isinstance(cond_raw, Waveform) else model.cfg.sample_rate
    cond = cond_raw.samples if isinstance(cond_raw, Waveform) else cond_raw
    if np.shape(cond)[-1] != zb.shape[-2] * zb.shape[-1]:
        raise ShapeError("conditional input length must equal G * T")
    x = model.inverse(zb, model.featurize(cond))
    return Waveform(x[0].detach().double().numpy(), rate)


def nll(z: torch.Tensor, total_logdet, sigma: float = 1.0) -> torch.Tensor:
    """Mean-per-dimension negative log-likelihood under ``N(0, sigma^2 I)``.

    ``z`` is ``(G, T)`` or ``(B, G, T)``; batched input returns the batch mean.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    zz = z.double()
    if zz.ndim == 2:
        zz = zz[None]
    logdet = torch.as_tensor(total_logdet, dtype=torch.float64).reshape(-1)
    d = zz.shape[1] * zz.shape[2]
    sq = (zz**2).sum(dim=(1, 2))
    per_item = (sq / (2.0 * sigma**2) + d * math.log(sigma * math.sqrt(2.0 * math.pi))
                - logdet) / d
    return per_item.mean()


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def parameter_breakdown(model: FlowModel) -> dict[str, int]:
    """Parameter count per top-level component, for documentation and reports."""
    out = {"cond_net": count_parameters(model.cond_net)}
    blk = model.blocks[0]
    out["per_block.inv1x1"] = count_parameters(blk.inv1x1)
    for name in ("start", "cond", "in_layers", "res_skip", "end"):
        out[f"per_subnet.{name}"] = count_parameters(getattr(blk.subnet_1, name))
    out["subnets_per_block"] = 1 if blk.subnet_2 is None else 2
    out["total"] = count_parameters(model)
    return out
