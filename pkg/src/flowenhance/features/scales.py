"""Psychoacoustic frequency scales."""
import numpy as np


def bark_from_hz(f):
    """Traunmüller (1990) critical-band rate in Bark."""
    f = np.asarray(f, dtype=np.float64)
    return 26.81 * f / (1960.0 + f) - 0.53


def hz_from_bark(z):
    z = np.asarray(z, dtype=np.float64)
    return 1960.0 * (z + 0.53) / (26.28 - z)


def critical_bandwidth_hz(f):
    """Zwicker & Terhardt (1980) critical bandwidth in Hz."""
    f = np.asarray(f, dtype=np.float64)
    return 25.0 + 75.0 * (1.0 + 1.4 * (f / 1000.0) ** 2) ** 0.69


def mel_from_hz(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def hz_from_mel(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)
