"""Magnitude Mel spectrogram on the HTK Mel scale."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.signal import get_window

from ..audio import Waveform
from ..errors import ShapeError
from .featuremap import FeatureMap
from .scales import hz_from_mel, mel_from_hz


@dataclass(frozen=True)
class MelConfig:
    fft_size: int = 512
    window: str = "hann"
    overlap: float = 0.75
    n_bands: int = 80
    fmin: float = 0.0
    fmax: Optional[float] = None  # None -> Nyquist

    def __post_init__(self):
        if self.fft_size < 2 or self.fft_size & (self.fft_size - 1):
            raise ValueError("fft_size must be a power of two")
        if not 0.0 <= self.overlap < 1.0:
            raise ValueError("overlap must lie in [0, 1)")
        if self.n_bands < 1:
            raise ValueError("n_bands must be >= 1")
        if self.hop < 1:
            raise ValueError("overlap leaves a hop of zero samples")

    @property
    def hop(self) -> int:
        return int(round(self.fft_size * (1.0 - self.overlap)))

    def band_limits(self, sample_rate):
        fmax = sample_rate / 2.0 if self.fmax is None else self.fmax
        if not 0.0 <= self.fmin < fmax <= sample_rate / 2.0:
            raise ValueError("need 0 <= fmin < fmax <= Nyquist")
        return self.fmin, fmax


def n_frames(n_samples: int, fft_size: int, hop: int) -> int:
    return 1 + (n_samples - fft_size) // hop


def mel_filterbank(cfg: MelConfig, sample_rate: int) -> np.ndarray:
    """Triangular weights, ``n_bands x (fft_size // 2 + 1)``."""
    fmin, fmax = cfg.band_limits(sample_rate)
    edges = hz_from_mel(np.linspace(mel_from_hz(fmin), mel_from_hz(fmax), cfg.n_bands + 2))
    freqs = np.arange(cfg.fft_size // 2 + 1) * sample_rate / cfg.fft_size
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    return np.maximum(0.0, np.minimum(rising, falling))


def mel_spectrogram(cfg: MelConfig, w: Waveform) -> FeatureMap:
    n = len(w)
    if n < cfg.fft_size:
        raise ShapeError(f"need at least {cfg.fft_size} samples, got {n}")
    hop = cfg.hop
    frames = np.lib.stride_tricks.sliding_window_view(w.samples, cfg.fft_size)[::hop]
    win = get_window(cfg.window, cfg.fft_size, fftbins=True)
    mag = np.abs(np.fft.rfft(frames * win, axis=1))
    mel = mel_filterbank(cfg, w.sample_rate) @ mag.T
    return FeatureMap(mel, w.sample_rate / hop, "mel")
