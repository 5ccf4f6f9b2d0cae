"""Complex all-pole gammatone filterbank with Bark-spaced bands.

Each band is a cascade of ``order`` identical first-order complex one-pole
sections ``y[t] = g * x[t] + p * y[t-1]`` with ``p = lam * exp(i*w_c)``. The
pole radius is chosen so the cascade's -3 dB bandwidth matches a multiple of
the critical bandwidth at the center frequency, and every band output is
advanced by a fraction of its envelope peak delay.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from ..audio import Waveform
from ..errors import DesignError, SampleRateError
from .featuremap import FeatureMap
from .scales import bark_from_hz, critical_bandwidth_hz, hz_from_bark


@dataclass(frozen=True)
class ApgConfig:
    n_bands: int = 80
    fmin: float = 40.0
    order: int = 4
    lookahead: float = 0.7
    bandwidth_scale: float = 1.0
    top_fraction: float = 0.98  # highest center as a fraction of Nyquist
    log_features: bool = False

    def __post_init__(self):
        if self.n_bands < 2:
            raise DesignError("n_bands must be >= 2")
        if self.order < 1:
            raise DesignError("order must be >= 1")
        if not 0.0 <= self.lookahead <= 1.0:
            raise DesignError("lookahead must lie in [0, 1]")
        if self.bandwidth_scale <= 0:
            raise DesignError("bandwidth_scale must be positive")
        if not 0.0 < self.top_fraction < 1.0:
            raise DesignError("top_fraction must lie in (0, 1)")


@dataclass(frozen=True, eq=False)
class ApgFilterbank:
    center_freqs: np.ndarray
    poles: np.ndarray
    gains: np.ndarray  # per-stage gain
    delays: np.ndarray  # compensation advance in samples
    peak_delays: np.ndarray  # envelope peak of the uncompensated impulse response
    order: int
    sample_rate: int
    log_features: bool = False

    @property
    def n_bands(self) -> int:
        return len(self.center_freqs)


def cascade_bandwidth_factor(order: int) -> float:
    """Ratio of the -3 dB bandwidth of an ``order`` cascade to that of one stage."""
    return np.sqrt(2.0 ** (1.0 / order) - 1.0)


def _run_band(x, pole, gain, order):
    y = x.astype(np.complex128)
    b, a = np.array([gain], dtype=np.complex128), np.array([1.0, -pole], dtype=np.complex128)
    for _ in range(order):
        y = lfilter(b, a, y)
    return y


def _impulse_length(pole, order):
    decay = -np.log(abs(pole))
    return int(np.ceil(12.0 * order / decay)) + 16


def design_apg(cfg: ApgConfig, sample_rate: int) -> ApgFilterbank:
    fs = float(sample_rate)
    nyquist = fs / 2.0
    top = cfg.top_fraction * nyquist
    if not 0.0 <= cfg.fmin < top:
        raise DesignError(f"fmin {cfg.fmin} Hz must lie below the top center {top} Hz")

    barks = np.linspace(bark_from_hz(cfg.fmin), bark_from_hz(top), cfg.n_bands)
    centers = hz_from_bark(barks)
    centers[0], centers[-1] = cfg.fmin, top
    if np.any(np.diff(centers) <= 0):
        raise DesignError("center frequencies collide")

    beta = cfg.bandwidth_scale * critical_bandwidth_hz(centers) / (
        2.0 * cascade_bandwidth_factor(cfg.order))
    lam = np.exp(-2.0 * np.pi * beta / fs)
    if np.any(lam >= 1.0):
        raise DesignError("unstable pole radius")
    omega = 2.0 * np.pi * centers / fs
    poles = lam * np.exp(1j * omega)

    # unit magnitude of one stage at its own center frequency
    stage_resp = 1.0 / (1.0 - poles * np.exp(-1j * omega))
    gains = 1.0 / np.abs(stage_resp)

    peaks = np.empty(cfg.n_bands, dtype=np.int64)
    for k in range(cfg.n_bands):
        imp = np.zeros(_impulse_length(poles[k], cfg.order))
        imp[0] = 1.0
        peaks[k] = int(np.argmax(np.abs(_run_band(imp, poles[k], gains[k], cfg.order))))
    delays = np.round(cfg.lookahead * peaks).astype(np.int64)

    return ApgFilterbank(centers, poles, gains, delays, peaks, cfg.order, int(sample_rate),
                         cfg.log_features)


def apg_band_outputs(fb: ApgFilterbank, x: np.ndarray, compensate: bool = True) -> np.ndarray:
    """Complex band outputs, ``n_bands x len(x)``."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    out = np.zeros((fb.n_bands, n), dtype=np.complex128)
    for k in range(fb.n_bands):
        y = _run_band(x, fb.poles[k], fb.gains[k], fb.order)
        d = int(fb.delays[k]) if compensate else 0
        if d < n:
            out[k, : n - d] = y[d:]
    return out


def apg_analyze(fb: ApgFilterbank, w: Waveform) -> FeatureMap:
    if w.sample_rate != fb.sample_rate:
        raise SampleRateError(
            f"filterbank designed for {fb.sample_rate} Hz, signal is {w.sample_rate} Hz")
    mag = np.abs(apg_band_outputs(fb, w.samples))
    if fb.log_features:
        mag = np.log1p(1000.0 * mag)
    return FeatureMap(mag, float(w.sample_rate), "apg")


def design_table(fb: ApgFilterbank) -> list[dict]:
    """Per-band design summary, one dict per row (for CSV dumps)."""
    return [
        {
            "band": k,
            "center_hz": float(fb.center_freqs[k]),
            "pole_radius": float(abs(fb.poles[k])),
            "stage_gain": float(fb.gains[k]),
            "peak_delay": int(fb.peak_delays[k]),
            "delay_comp": int(fb.delays[k]),
        }
        for k in range(fb.n_bands)
    ]
