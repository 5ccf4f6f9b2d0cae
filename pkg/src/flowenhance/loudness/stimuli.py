"""Listening-test stimulus preparation with matched noise floors.

Per item: build a reference condition from the clean speech plus the background
attenuated by 30 dB, find speech activity on the clean signal, match every
system's non-speech loudness to the reference condition's by scaling that
system's background, add a 3.5 kHz low-passed anchor, and normalize every
output to -23 LUFS (ungated).
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import butter, sosfilt

from ..audio import Waveform, read_wav, write_wav
from ..errors import MatchError, ShapeError
from .meter import gain_to_target, integrated_loudness, measure_masked_loudness

log = logging.getLogger(__name__)

TARGET_LUFS = -23.0
REFERENCE_ATTENUATION_DB = 30.0
ANCHOR_CUTOFF_HZ = 3500.0
ANCHOR_ORDER = 8


@dataclass(frozen=True)
class ActivityConfig:
    window_s: float = 0.02
    hop_s: float = 0.01
    threshold_db: float = -40.0
    close_s: float = 0.1  # inactive gaps shorter than this are filled
    open_s: float = 0.05  # active islands shorter than this are removed


@dataclass(frozen=True)
class MatchConfig:
    lo_db: float = -60.0
    hi_db: float = 20.0
    tol_lu: float = 0.1
    max_iter: int = 40


@dataclass
class StimulusSet:
    item_id: str
    reference_condition: Waveform
    conditions: dict
    anchor: Waveform
    applied_gains_db: dict
    report: dict = field(default_factory=dict)


def _check_pair(a: Waveform, b: Waveform, what: str):
    if len(a) != len(b):
        raise ShapeError(f"{what}: lengths differ ({len(a)} vs {len(b)})")
    if a.sample_rate != b.sample_rate:
        raise ShapeError(f"{what}: sample rates differ ({a.sample_rate} vs {b.sample_rate})")


def _runs(mask: np.ndarray):
    """``(start, stop, value)`` for each maximal run of equal values."""
    if mask.size == 0:
        return []
    edges = np.flatnonzero(np.diff(mask.astype(np.int8))) + 1
    starts = np.concatenate([[0], edges])
    stops = np.concatenate([edges, [mask.size]])
    return [(int(s), int(e), bool(mask[s])) for s, e in zip(starts, stops)]


def rms_envelope(x: np.ndarray, sample_rate: int, window_s: float, hop_s: float) -> np.ndarray:
    """Sliding-window RMS, one value per hop, held over that hop's samples.

    Each window is centered on its hop segment; the signal is zero-extended at
    both ends.
    """
    win = int(round(window_s * sample_rate))
    hop = int(round(hop_s * sample_rate))
    n = len(x)
    n_hops = -(-n // hop)
    lead = (win - hop) // 2
    padded = np.concatenate([np.zeros(lead), x, np.zeros(n_hops * hop - n + win)])
    cs = np.concatenate([[0.0], np.cumsum(padded * padded)])
    starts = np.arange(n_hops) * hop
    env = np.sqrt(np.maximum(cs[starts + win] - cs[starts], 0.0) / win)
    return np.repeat(env, hop)[:n]


def speech_activity(clean: Waveform, cfg: ActivityConfig = ActivityConfig()) -> np.ndarray:
    """Boolean per-sample mask: envelope above ``threshold_db`` relative to its peak,
    then short gaps closed and short islands opened."""
    env = rms_envelope(clean.samples, clean.sample_rate, cfg.window_s, cfg.hop_s)
    peak = float(env.max(initial=0.0))
    if peak == 0.0:
        return np.zeros(len(clean), dtype=bool)
    mask = env > peak * 10.0 ** (cfg.threshold_db / 20.0)
    close_n = cfg.close_s * clean.sample_rate
    for s, e, v in _runs(mask):
        if not v and s > 0 and e < mask.size and e - s < close_n:
            mask[s:e] = True
    open_n = cfg.open_s * clean.sample_rate
    for s, e, v in _runs(mask):
        if v and e - s < open_n:
            mask[s:e] = False
    return mask


def background_component(mixture: Waveform, estimate: Waveform) -> Waveform:
    """What the estimate left out of the mixture: ``mixture - estimate``."""
    _check_pair(mixture, estimate, "background_component")
    return mixture.with_samples(mixture.samples - estimate.samples)


def build_reference_condition(clean: Waveform, background: Waveform,
                              attenuation_db: float = REFERENCE_ATTENUATION_DB) -> Waveform:
    """Clean speech plus the background attenuated by ``attenuation_db`` (amplitude)."""
    _check_pair(clean, background, "build_reference_condition")
    return clean.with_samples(clean.samples + background.samples * 10.0 ** (-attenuation_db / 20.0))


def match_noise_floor(speech: Waveform, background: Waveform, mask, target_lufs: float,
                      cfg: MatchConfig = MatchConfig(), item: str = "") -> tuple[float, Waveform]:
    """Bisect the background gain until the non-speech loudness reaches ``target_lufs``.

    Returns ``(gain_db, speech + 10**(gain_db/20) * background)``. Raises
    :class:`MatchError` naming the bound when the target lies outside what the
    gain range can reach.
    """
    _check_pair(speech, background, "match_noise_floor")

    def mix(gain_db):
        return speech.with_samples(speech.samples + 10.0 ** (gain_db / 20.0) * background.samples)

    def floor(gain_db):
        return measure_masked_loudness(mix(gain_db), mask, "inactive", item).lufs

    lo, hi = cfg.lo_db, cfg.hi_db
    f_lo, f_hi = floor(lo), floor(hi)
    if f_lo > target_lufs + cfg.tol_lu:
        raise MatchError(f"{item or 'condition'}: non-speech loudness {f_lo:.2f} LUFS at the "
                         f"lower gain bound {lo} dB is already above target {target_lufs:.2f}")
    if f_hi < target_lufs - cfg.tol_lu:
        raise MatchError(f"{item or 'condition'}: non-speech loudness {f_hi:.2f} LUFS at the "
                         f"upper gain bound {hi} dB is still below target {target_lufs:.2f}")
    mid = 0.5 * (lo + hi)
    for _ in range(cfg.max_iter):
        mid = 0.5 * (lo + hi)
        level = floor(mid)
        if abs(level - target_lufs) <= cfg.tol_lu:
            break
        if level < target_lufs:
            lo = mid
        else:
            hi = mid
    return mid, mix(mid)


def lowpass_anchor(w: Waveform, cutoff_hz: float = ANCHOR_CUTOFF_HZ,
                   order: int = ANCHOR_ORDER) -> Waveform:
    sos = butter(order, cutoff_hz, "lowpass", fs=w.sample_rate, output="sos")
    return w.with_samples(sosfilt(sos, w.samples))


def prepare_stimuli(mixture: Waveform, clean: Waveform, systems: dict, item_id: str = "item",
                    target_lufs: float = TARGET_LUFS,
                    activity: ActivityConfig = ActivityConfig(),
                    match: MatchConfig = MatchConfig()) -> StimulusSet:
    """Run the full reference/condition preparation for one item.

    ``systems`` maps condition names to enhanced outputs. A condition whose
    noise floor cannot be matched is kept unmatched, flagged in the report and
    still normalized.
    """
    _check_pair(mixture, clean, "prepare_stimuli")
    for name, est in systems.items():
        _check_pair(mixture, est, f"prepare_stimuli[{name}]")

    reference = build_reference_condition(clean, background_component(mixture, clean))
    mask = speech_activity(clean, activity)
    target_floor = measure_masked_loudness(reference, mask, "inactive", item_id).lufs
    flags = []

    matched, gains = {}, {}
    for name, est in systems.items():
        try:
            gains[name], matched[name] = match_noise_floor(
                est, background_component(mixture, est), mask, target_floor, match,
                f"{item_id}/{name}")
        except MatchError as exc:
            log.warning("%s", exc)
            flags.append(f"match_failed:{name}: {exc}")
            gains[name], matched[name] = 0.0, est

    anchor = lowpass_anchor(reference)
    outputs = {"reference": reference, "anchor": anchor, **matched}
    norm_gains, final = {}, {}
    for name, w in outputs.items():
        norm_gains[name] = gain_to_target(w, target_lufs)
        final[name] = w.with_samples(w.samples * 10.0 ** (norm_gains[name] / 20.0))

    def entry(name, pre):
        return {
            "gain_db": gains.get(name, 0.0),
            "nonspeech_lufs": measure_masked_loudness(pre, mask, "inactive", item_id).lufs,
            "normalization_gain_db": norm_gains[name],
            "nonspeech_lufs_final": measure_masked_loudness(
                final[name], mask, "inactive", item_id).lufs,
            "final_lufs": integrated_loudness(final[name], gated=False).lufs,
        }

    report = {
        "item_id": item_id,
        "target_nonspeech_lufs": target_floor,
        "active_fraction": float(np.mean(mask)),
        "per_condition": {name: entry(name, matched[name]) for name in systems},
        "references": {name: entry(name, outputs[name]) for name in ("reference", "anchor")},
        "flags": flags,
    }
    return StimulusSet(item_id, final["reference"], {k: final[k] for k in systems},
                       final["anchor"], {k: gains[k] for k in systems}, report)


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_json_safe(v) for v in obj]
    return obj


def write_stimulus_set(stim: StimulusSet, out_dir) -> Path:
    """Write ``<out>/<item>/{reference,anchor,<condition>}.wav`` and ``report.json``."""
    item_dir = Path(out_dir) / stim.item_id
    item_dir.mkdir(parents=True, exist_ok=True)
    write_wav(item_dir / "reference.wav", stim.reference_condition, "float32")
    write_wav(item_dir / "anchor.wav", stim.anchor, "float32")
    for name, w in stim.conditions.items():
        write_wav(item_dir / f"{name}.wav", w, "float32")
    path = item_dir / "report.json"
    path.write_text(json.dumps(_json_safe(stim.report), indent=2, sort_keys=True) + "\n")
    return path


def load_item(item_dir) -> tuple[Waveform, Waveform, dict]:
    """Read ``mixture.wav``, ``clean.wav`` and every ``sys_*.wav`` from an item directory.

    Condition names are the file stems with the ``sys_`` prefix removed.
    """
    d = Path(item_dir)
    for req in ("mixture.wav", "clean.wav"):
        if not (d / req).is_file():
            raise FileNotFoundError(f"{d}: missing {req}")
    systems = {p.stem[len("sys_"):]: read_wav(p) for p in sorted(d.glob("sys_*.wav"))}
    return read_wav(d / "mixture.wav"), read_wav(d / "clean.wav"), systems
