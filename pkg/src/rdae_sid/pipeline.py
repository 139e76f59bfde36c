"""Glue from clips to feature sets, shared by the CLI and the test suite."""

from __future__ import annotations

from dataclasses import asdict
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import dsp, synth
from .augmentation import (
    DEFAULT_SNR_LEVELS,
    CLEAN,
    ConditionedSegment,
    NoiseSource,
    SnrCondition,
    highpass_noise,
    iter_multicondition,
)
from .cache import FeatureSet
from .errors import ArgumentError, FormatError
from .features import handcrafted_features, log_mel_spectrogram

EXTRACTORS = {"mel": log_mel_spectrogram, "handcrafted": handcrafted_features}


def speech_segments(clips: Iterable[dsp.AudioClip], vad: dsp.VadConfig | None = None) -> list[dsp.Segment]:
    """Canonicalize each clip and keep the seconds the VAD marks as speech."""
    out = []
    for clip in clips:
        out.extend(s for s in dsp.segment_and_vad(dsp.canonicalize(clip), vad) if s.is_speech)
    return out


def featurize(conditioned: Iterable[ConditionedSegment], kinds: Sequence[str] = ("mel",)) -> dict[str, FeatureSet]:
    records, values = [], {k: [] for k in kinds}
    for seg in conditioned:
        records.append(asdict(seg.record(cache_offset=len(records))))
        for k in kinds:
            values[k].append(EXTRACTORS[k](seg.samples).astype(np.float32))
    return {k: FeatureSet(np.stack(values[k]), records, k) for k in kinds}


def synthetic_clips(n_speakers: int, seconds_per_speaker: float, seed: int, utterance_s: float = 6.0) -> list[dsp.AudioClip]:
    n_utt = max(1, int(round(seconds_per_speaker / utterance_s)))
    clips = []
    for profile in synth.make_profiles(n_speakers, seed):
        for u in range(n_utt):
            clips.append(
                synth.synth_utterance(profile, utterance_s, seed * 100003 + u, utterance_id=f"{profile.name}_u{u:03d}")
            )
    return clips


def synthetic_noises(kinds: Sequence[str], seed: int, duration_s: float = 60.0) -> list[NoiseSource]:
    return [highpass_noise(synth.synth_noise(k, duration_s, seed)) for k in kinds]


def synthetic_feature_sets(
    n_speakers: int = 5,
    seconds_per_speaker: float = 60.0,
    seed: int = 0,
    noise_kinds: Sequence[str] = synth.NOISE_KINDS,
    snr_levels: Sequence[int] = DEFAULT_SNR_LEVELS,
    kinds: Sequence[str] = ("mel", "handcrafted"),
) -> dict[str, FeatureSet]:
    """The desk-scale multi-condition corpus as in-memory feature sets."""
    segments = speech_segments(synthetic_clips(n_speakers, seconds_per_speaker, seed))
    noises = synthetic_noises(noise_kinds, seed)
    snrs = [CLEAN] + [SnrCondition(int(v)) for v in snr_levels]
    return featurize(iter_multicondition(segments, noises, snrs, seed), kinds)


# ---------------------------------------------------------------- waveform stores
#
# Between CLI stages, 1-second waveforms live in a raw little-endian float32
# file next to their JSON-lines manifest: record i occupies samples
# [i * 16000, (i + 1) * 16000) and manifests refer to it by ``cache_offset``.


def store_path(manifest_path) -> Path:
    return Path(manifest_path).with_suffix(".f32")


def write_store(path, waveforms: Iterable[np.ndarray]) -> int:
    n = 0
    with open(path, "wb") as fh:
        for w in waveforms:
            if w.shape != (dsp.CANONICAL_RATE,):
                raise ArgumentError(f"store records must hold {dsp.CANONICAL_RATE} samples")
            fh.write(np.ascontiguousarray(w, dtype="<f4").tobytes())
            n += 1
    return n


def read_store(path) -> np.ndarray:
    raw = np.fromfile(path, dtype="<f4")
    if raw.size % dsp.CANONICAL_RATE:
        raise FormatError(f"{path}: size is not a whole number of 1-second records")
    return raw.reshape(-1, dsp.CANONICAL_RATE)
