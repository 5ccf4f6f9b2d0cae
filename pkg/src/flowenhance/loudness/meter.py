"""K-weighted integrated loudness (BS.1770 style) for mono signals."""
from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np
from scipy.signal import lfilter

from ..audio import Waveform
from ..errors import DegenerateInputError, SampleRateError, ShapeError

SUPPORTED_RATES = (16000, 48000)

# analog prototype parameters of the two K-weighting stages; redesigned per
# sample rate with the bilinear transform so they hold away from 48 kHz
SHELF_F0 = 1681.974450955533
SHELF_GAIN_DB = 3.999843853973347
SHELF_Q = 0.7071752369554196
SHELF_VB_EXP = 0.4996667741545416
HIGHPASS_F0 = 38.13547087602444
HIGHPASS_Q = 0.5003270373238773

BLOCK_S = 0.4
BLOCK_OVERLAP = 0.75
LOUDNESS_OFFSET = -0.691
ABSOLUTE_GATE = -70.0
RELATIVE_GATE = -10.0


class LoudnessReading(NamedTuple):
    lufs: float  # -inf for digital silence
    gated: bool


def k_weight_coefficients(sample_rate: int):
    """``((b_shelf, a_shelf), (b_hp, a_hp))`` for the two K-weighting biquads."""
    if sample_rate not in SUPPORTED_RATES:
        raise SampleRateError(f"K-weighting supports {SUPPORTED_RATES} Hz, got {sample_rate}")
    k = math.tan(math.pi * SHELF_F0 / sample_rate)
    vh = 10.0 ** (SHELF_GAIN_DB / 20.0)
    vb = vh**SHELF_VB_EXP
    a0 = 1.0 + k / SHELF_Q + k * k
    shelf_b = np.array([vh + vb * k / SHELF_Q + k * k, 2.0 * (k * k - vh),
                        vh - vb * k / SHELF_Q + k * k]) / a0
    shelf_a = np.array([1.0, 2.0 * (k * k - 1.0) / a0, (1.0 - k / SHELF_Q + k * k) / a0])

    k = math.tan(math.pi * HIGHPASS_F0 / sample_rate)
    a0 = 1.0 + k / HIGHPASS_Q + k * k
    hp_b = np.array([1.0, -2.0, 1.0])
    hp_a = np.array([1.0, 2.0 * (k * k - 1.0) / a0, (1.0 - k / HIGHPASS_Q + k * k) / a0])
    return (shelf_b, shelf_a), (hp_b, hp_a)


def k_weight(w: Waveform) -> Waveform:
    """High shelf (+4 dB above ~1.7 kHz) followed by a ~38 Hz high-pass."""
    (sb, sa), (hb, ha) = k_weight_coefficients(w.sample_rate)
    return w.with_samples(lfilter(hb, ha, lfilter(sb, sa, w.samples)))


def block_powers(w: Waveform) -> np.ndarray:
    """Mean square of the K-weighted signal over 400 ms blocks with 75% overlap."""
    size = int(round(BLOCK_S * w.sample_rate))
    step = int(round(BLOCK_S * (1.0 - BLOCK_OVERLAP) * w.sample_rate))
    if len(w) < size:
        raise DegenerateInputError(
            f"loudness needs at least {BLOCK_S * 1000:.0f} ms, got {len(w) / w.sample_rate * 1000:.1f} ms")
    y = k_weight(w).samples
    cs = np.concatenate([[0.0], np.cumsum(y * y)])
    starts = np.arange(0, len(y) - size + 1, step)
    return (cs[starts + size] - cs[starts]) / size


def _lufs(power) -> float:
    power = float(power)
    return LOUDNESS_OFFSET + 10.0 * math.log10(power) if power > 0 else -math.inf


def integrated_loudness(w: Waveform, gated: bool = True) -> LoudnessReading:
    """Integrated loudness in LUFS; ungated mode averages every block."""
    z = block_powers(w)
    if not gated:
        return LoudnessReading(_lufs(np.mean(z)), False)
    with np.errstate(divide="ignore"):
        block_lufs = LOUDNESS_OFFSET + 10.0 * np.log10(z)
    keep = block_lufs > ABSOLUTE_GATE
    if not np.any(keep):
        return LoudnessReading(-math.inf, True)
    rel = _lufs(np.mean(z[keep])) + RELATIVE_GATE
    keep &= block_lufs > rel
    return LoudnessReading(_lufs(np.mean(z[keep])), True)


def measure_masked_loudness(w: Waveform, mask, keep: str = "inactive",
                            item: str = "") -> LoudnessReading:
    """Ungated loudness of the samples selected by ``mask`` (``keep="active"``) or
    its complement (``keep="inactive"``), concatenated."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (len(w),):
        raise ShapeError(f"mask of length {mask.size} does not match signal of length {len(w)}")
    if keep not in ("active", "inactive"):
        raise ValueError(f"keep must be 'active' or 'inactive', got {keep!r}")
    sel = mask if keep == "active" else ~mask
    part = w.samples[sel]
    if len(part) < BLOCK_S * w.sample_rate:
        where = f" in item {item!r}" if item else ""
        raise DegenerateInputError(
            f"{keep} part{where} is {len(part) / w.sample_rate * 1000:.1f} ms, "
            f"loudness needs {BLOCK_S * 1000:.0f} ms")
    return integrated_loudness(w.with_samples(part), gated=False)


def gain_to_target(w: Waveform, target_lufs: float) -> float:
    """Gain in dB that brings the ungated loudness of ``w`` to ``target_lufs``."""
    current = integrated_loudness(w, gated=False).lufs
    if not math.isfinite(current):
        raise DegenerateInputError("cannot normalize a silent signal")
    return target_lufs - current
