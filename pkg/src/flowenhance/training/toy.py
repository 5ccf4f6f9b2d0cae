"""Synthetic clean/noise corpora small enough to train on a laptop CPU.

The toy "speech" is high-passed white noise under a slow amplitude envelope and
the toy "noise" is a low-frequency harmonic hum. The two occupy different bands,
so a small flow can learn to separate them within a few CPU minutes.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.signal import butter, sosfilt

from ..audio import Waveform, write_manifest, write_wav
from ..flow.model import FlowConfig

TRAIN_SNRS = (0.0, 5.0, 10.0, 15.0)
TEST_SNRS = (2.5, 7.5, 12.5, 17.5)

CLEAN_HIGHPASS_HZ = 1000.0
HUM_F0_HZ = (50.0, 100.0)
HUM_HARMONICS = 2


def toy_clean(rng: np.random.Generator, n: int, sample_rate: int, peak: float = 0.9) -> np.ndarray:
    """High-passed white noise with a slow sinusoidal amplitude envelope."""
    t = np.arange(n) / sample_rate
    sos = butter(4, CLEAN_HIGHPASS_HZ, "highpass", fs=sample_rate, output="sos")
    x = sosfilt(sos, rng.standard_normal(n))
    env = 0.6 + 0.4 * np.sin(2 * np.pi * rng.uniform(0.5, 2.0) * t + rng.uniform(0, 2 * np.pi))
    x *= env
    return peak * x / np.max(np.abs(x))


def toy_noise(rng: np.random.Generator, n: int, sample_rate: int = 16000) -> np.ndarray:
    """Harmonic hum with a random fundamental in ``HUM_F0_HZ``."""
    t = np.arange(n) / sample_rate
    f0 = rng.uniform(*HUM_F0_HZ)
    x = np.zeros(n)
    for h in range(1, HUM_HARMONICS + 1):
        x += rng.uniform(0.3, 1.0) / h * np.sin(2 * np.pi * h * f0 * t + rng.uniform(0, 2 * np.pi))
    return x


def make_toy_dataset(out_dir, n_items: int = 20, seed: int = 0, duration_s: float = 2.0,
                     sample_rate: int = 16000, snrs=TRAIN_SNRS, name: str = "train",
                     peak: float = 0.9) -> Path:
    """Write ``n_items`` clean/noise WAV pairs plus a manifest; returns the manifest path."""
    out = Path(out_dir)
    (out / name).mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * sample_rate))
    rows = []
    for i in range(n_items):
        clean = toy_clean(rng, n, sample_rate, peak)
        noise = toy_noise(rng, n, sample_rate)
        noise *= 0.25 / np.max(np.abs(noise))
        c_rel, n_rel = f"{name}/clean_{i:03d}.wav", f"{name}/noise_{i:03d}.wav"
        write_wav(out / c_rel, Waveform(clean, sample_rate), "float32")
        write_wav(out / n_rel, Waveform(noise, sample_rate), "float32")
        rows.append((c_rel, n_rel, float(snrs[i % len(snrs)])))
    manifest = out / f"{name}.tsv"
    write_manifest(manifest, rows)
    return manifest


def make_toy_splits(out_dir, seed: int = 0) -> tuple[Path, Path, Path]:
    """Train (20 items, SNRs 0..15 dB), validation (8) and test (20) at the in-between SNRs."""
    tr = make_toy_dataset(out_dir, 20, seed=seed + 1, name="train")
    va = make_toy_dataset(out_dir, 8, seed=seed + 2, name="val", snrs=TEST_SNRS)
    te = make_toy_dataset(out_dir, 20, seed=seed + 3, name="test", snrs=TEST_SNRS)
    return tr, va, te


def toy_model_config(cond_kind: str = "time") -> FlowConfig:
    """Small flow that trains on the toy corpus in well under a minute per 20 epochs.

    Narrow subnets (8 channels) with a wide conditional projection (64) keep the
    optimizer focused on the conditional path, which is where the toy task is
    solved.
    """
    return FlowConfig(n_blocks=4, g=8, hidden=8, n_layers=4, cond_channels=64,
                      cond_kind=cond_kind)


TOY_TRAIN_OVERRIDES = {"batch_size": 1, "lr": 1e-2, "epochs": 20}
