"""Mono waveform container, WAV I/O, SNR mixing and chunking helpers."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.io import wavfile

from .errors import (
    DegenerateInputError,
    SampleRateError,
    ShapeError,
    UnsupportedEncodingError,
    WavFormatError,
)

log = logging.getLogger(__name__)

DEFAULT_SAMPLE_RATE = 16000
PCM16_SCALE = 32768.0


@dataclass(frozen=True, eq=False)
class Waveform:
    """Mono audio at full scale 1.0.

    ``samples`` is stored as a read-only float64 array so a Waveform can be
    shared between threads without copying.
    """

    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        x = np.array(self.samples, dtype=np.float64, copy=True).reshape(-1)
        if not np.all(np.isfinite(x)):
            raise ValueError("waveform contains NaN or Inf")
        if int(self.sample_rate) <= 0:
            raise SampleRateError(f"sample rate must be positive, got {self.sample_rate}")
        x.flags.writeable = False
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    def with_samples(self, samples) -> "Waveform":
        return Waveform(samples, self.sample_rate)


class SnrSpec(NamedTuple):
    snr_db: float


class ManifestItem(NamedTuple):
    clean_path: Path
    noise_path: Path
    snr_db: float


def read_wav(path) -> Waveform:
    """Read a PCM16 or float32 WAV file, downmixing to mono by averaging."""
    try:
        rate, data = wavfile.read(str(path))
    except (FileNotFoundError, PermissionError, IsADirectoryError):
        raise
    except (ValueError, EOFError) as exc:
        msg = str(exc)
        if "Unknown wave file format" in msg or "Unsupported bit depth" in msg:
            raise UnsupportedEncodingError(f"{path}: {msg}") from exc
        raise WavFormatError(f"{path}: {msg}") from exc

    if data.dtype == np.int16:
        x = data.astype(np.float64) / PCM16_SCALE
    elif data.dtype == np.float32:
        x = data.astype(np.float64)
    else:
        raise UnsupportedEncodingError(f"{path}: sample type {data.dtype} not supported")
    if x.ndim == 2:
        x = x.mean(axis=1)
    return Waveform(x, rate)


def write_wav(path, w: Waveform, encoding: str = "float32") -> None:
    if encoding == "float32":
        data = w.samples.astype(np.float32)
    elif encoding == "pcm16":
        q = np.round(w.samples * PCM16_SCALE)
        data = np.clip(q, -32768, 32767).astype(np.int16)
    else:
        raise UnsupportedEncodingError(f"unknown encoding {encoding!r}")
    wavfile.write(str(path), w.sample_rate, data)


def power(w: Waveform) -> float:
    return float(np.mean(w.samples**2)) if len(w) else 0.0


def snr_db(signal: Waveform, noise: Waveform) -> float:
    return 10.0 * np.log10(power(signal) / power(noise))


def mix_at_snr(clean: Waveform, noise: Waveform, spec) -> tuple[Waveform, Waveform]:
    """Scale ``noise`` to the requested full-utterance SNR and add it to ``clean``.

    Returns ``(mixture, scaled_noise)``.
    """
    target = float(spec.snr_db if isinstance(spec, SnrSpec) else spec)
    if not np.isfinite(target):
        raise ValueError("snr_db must be finite")
    if len(clean) != len(noise):
        raise ShapeError(f"length mismatch: clean {len(clean)} vs noise {len(noise)}")
    if clean.sample_rate != noise.sample_rate:
        raise SampleRateError("clean and noise sample rates differ")
    p_clean, p_noise = power(clean), power(noise)
    if p_noise == 0.0:
        raise DegenerateInputError("noise has zero energy")
    if p_clean == 0.0:
        raise DegenerateInputError("clean signal has zero energy")
    gain = np.sqrt(p_clean / (p_noise * 10.0 ** (target / 10.0)))
    scaled = noise.samples * gain
    return clean.with_samples(clean.samples + scaled), noise.with_samples(scaled)


def chunk_offset(n_samples: int, chunk_len: int, rng_seed: int) -> int:
    if n_samples <= chunk_len:
        return 0
    rng = np.random.default_rng(rng_seed)
    return int(rng.integers(0, n_samples - chunk_len + 1))


def chunk_random(w: Waveform, duration_s: float, rng_seed: int) -> Waveform:
    """Random contiguous chunk of ``duration_s`` seconds.

    Two waveforms of equal length chunked with the same seed get the same
    offset, which keeps clean/noisy training pairs aligned. Signals shorter
    than the chunk are zero-extended.
    """
    n = int(round(duration_s * w.sample_rate))
    if len(w) < n:
        log.info("signal of %d samples shorter than chunk of %d, zero-padding", len(w), n)
        return w.with_samples(np.pad(w.samples, (0, n - len(w))))
    start = chunk_offset(len(w), n, rng_seed)
    return w.with_samples(w.samples[start:start + n])


def center_crop(w: Waveform, duration_s: float) -> Waveform:
    n = int(round(duration_s * w.sample_rate))
    if len(w) < n:
        return w.with_samples(np.pad(w.samples, (0, n - len(w))))
    start = (len(w) - n) // 2
    return w.with_samples(w.samples[start:start + n])


def pad_to_multiple(w: Waveform, g: int) -> tuple[Waveform, int]:
    if g < 1:
        raise ValueError("g must be >= 1")
    pad_len = (-len(w)) % g
    if pad_len == 0:
        return w, 0
    return w.with_samples(np.pad(w.samples, (0, pad_len))), pad_len


def trim(w: Waveform, pad_len: int) -> Waveform:
    return w if pad_len == 0 else w.with_samples(w.samples[: len(w) - pad_len])


def read_manifest(path) -> list[ManifestItem]:
    """Parse a ``clean<TAB>noise<TAB>snr_db`` manifest.

    Relative paths are resolved against the manifest's directory.
    """
    path = Path(path)
    base = path.parent
    items = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ValueError(f"{path}:{lineno}: expected 3 tab-separated fields")
        clean, noise, snr = parts
        items.append(ManifestItem(base / clean.strip(), base / noise.strip(), float(snr)))
    return items


def write_manifest(path, items) -> None:
    lines = [f"{c}\t{n}\t{s!r}" for c, n, s in items]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
