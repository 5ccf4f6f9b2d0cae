from .apg import ApgConfig, ApgFilterbank, apg_analyze, design_apg
from .featuremap import FeatureMap, read_feature_dump, write_feature_dump
from .mel import MelConfig, mel_spectrogram
from .scales import bark_from_hz, critical_bandwidth_hz, hz_from_bark
from .upsample import MelUpsampler, upsample_features

__all__ = [
    "ApgConfig",
    "ApgFilterbank",
    "FeatureMap",
    "MelConfig",
    "MelUpsampler",
    "apg_analyze",
    "bark_from_hz",
    "critical_bandwidth_hz",
    "design_apg",
    "hz_from_bark",
    "mel_spectrogram",
    "read_feature_dump",
    "upsample_features",
    "write_feature_dump",
]
