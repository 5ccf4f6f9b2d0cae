from .meter import LoudnessReading, integrated_loudness, k_weight, measure_masked_loudness
from .stimuli import (ActivityConfig, MatchConfig, StimulusSet, background_component,
                      build_reference_condition, match_noise_floor, prepare_stimuli,
                      speech_activity, write_stimulus_set)

__all__ = [
    "ActivityConfig",
    "LoudnessReading",
    "MatchConfig",
    "StimulusSet",
    "background_component",
    "build_reference_condition",
    "integrated_loudness",
    "k_weight",
    "match_noise_floor",
    "measure_masked_loudness",
    "prepare_stimuli",
    "speech_activity",
    "write_stimulus_set",
]
