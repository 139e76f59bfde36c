"""Additive-noise contamination at exact SNRs and the multi-condition manifest."""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np
from scipy import signal

from . import dsp
from ._seeding import derive_seed
from .errors import ArgumentError, DegenerateInputError, FormatError

DEMAND_NOISES = ("DWASHING", "OHALLWAY", "PRESTO", "TBUS", "SPSQUARE", "SCAFE")
DEFAULT_SNR_LEVELS = (-5, 0, 5, 10, 15, 20)
SILENT_EXCERPT_POWER = 1e-10
MAX_EXCERPT_ATTEMPTS = 16


@dataclass(frozen=True)
class NoiseSource:
    name: str
    samples: np.ndarray
    filtered: bool = False
    sample_rate_hz: int = dsp.CANONICAL_RATE

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz


@dataclass(frozen=True, order=True)
class SnrCondition:
    """An SNR level in dB, or the clean (uncontaminated) condition when ``db`` is None."""

    db: int | None = None

    @property
    def is_clean(self) -> bool:
        return self.db is None

    @property
    def label(self) -> str:
        return "clean" if self.db is None else str(self.db)

    @classmethod
    def parse(cls, text: str | int | None) -> "SnrCondition":
        if text is None or (isinstance(text, str) and text.strip().lower() == "clean"):
            return cls(None)
        try:
            return cls(int(text))
        except (TypeError, ValueError):
            raise ArgumentError(f"bad SNR value {text!r}") from None


CLEAN = SnrCondition(None)


def default_conditions() -> list[SnrCondition]:
    return [CLEAN] + [SnrCondition(v) for v in DEFAULT_SNR_LEVELS]


@dataclass(frozen=True)
class ConditionedSegment:
    samples: np.ndarray
    utterance_id: str
    segment_index: int
    speaker_id: str | None
    noise_name: str | None
    snr: SnrCondition
    group_key: str
    rescale_factor: float = 1.0
    noise_gain: float = 0.0
    noise_offset: int = -1

    def record(self, cache_offset: int = -1) -> "ManifestRecord":
        return ManifestRecord(
            group_key=self.group_key,
            speaker_id=self.speaker_id,
            utterance_id=self.utterance_id,
            segment_index=self.segment_index,
            noise_name=self.noise_name,
            snr_db=self.snr.label if self.snr.is_clean else self.snr.db,
            rescale_factor=self.rescale_factor,
            cache_offset=cache_offset,
        )


@dataclass(frozen=True)
class ManifestRecord:
    """One JSON-lines manifest row."""

    group_key: str
    speaker_id: str | None
    utterance_id: str
    segment_index: int
    noise_name: str | None
    snr_db: int | str
    rescale_factor: float
    cache_offset: int

    @property
    def snr(self) -> SnrCondition:
        return SnrCondition.parse(self.snr_db)


# ---------------------------------------------------------------- noise prep


def highpass_noise(noise: NoiseSource, cutoff_hz: float = 60.0) -> NoiseSource:
    """4th-order Butterworth high-pass, run forward and backward (zero phase)."""
    nyquist = noise.sample_rate_hz / 2
    if not 0 < cutoff_hz < nyquist:
        raise ArgumentError(f"cutoff {cutoff_hz} Hz must lie in (0, {nyquist}) Hz")
    if noise.filtered:
        raise ArgumentError(f"noise {noise.name!r} is already high-pass filtered")
    sos = signal.butter(4, cutoff_hz, btype="highpass", fs=noise.sample_rate_hz, output="sos")
    filtered = signal.sosfiltfilt(sos, np.asarray(noise.samples, dtype=np.float64))
    return replace(noise, samples=filtered, filtered=True)


def draw_noise_offset(noise: NoiseSource, length: int, rng_seed: int) -> int:
    n = noise.samples.size
    if length > n:
        raise ArgumentError(f"noise {noise.name!r} has {n} samples, need {length}")
    if not noise.filtered:
        raise ArgumentError(f"noise {noise.name!r} must be high-pass filtered before mixing")
    rng = np.random.default_rng(rng_seed)
    for _ in range(MAX_EXCERPT_ATTEMPTS):
        offset = int(rng.integers(0, n - length + 1))
        excerpt = noise.samples[offset : offset + length]
        if float(np.mean(excerpt * excerpt)) >= SILENT_EXCERPT_POWER:
            return offset
    raise DegenerateInputError(
        f"noise {noise.name!r}: {MAX_EXCERPT_ATTEMPTS} consecutive silent excerpts"
    )


def draw_noise_excerpt(noise: NoiseSource, length: int, rng_seed: int) -> np.ndarray:
    """Contiguous excerpt at a seeded uniform offset; silent excerpts are redrawn."""
    offset = draw_noise_offset(noise, length, rng_seed)
    return noise.samples[offset : offset + length].copy()


# ---------------------------------------------------------------- mixing


def noise_gain_for_snr(speech_power: float, noise_power: float, snr_db: float) -> float:
    return math.sqrt(speech_power / (noise_power * 10.0 ** (snr_db / 10.0)))


def mix_at_snr(
    speech: dsp.Segment,
    noise_excerpt: np.ndarray | None,
    snr_db: int | SnrCondition | None,
    noise_name: str | None = None,
    noise_offset: int = -1,
) -> ConditionedSegment:
    """Add ``noise_excerpt`` scaled so the mixture has the requested SNR.

    Powers are mean squares over the segment. A mixture whose peak exceeds 1 is
    rescaled as a whole, which leaves the realized SNR untouched.
    """
    snr = snr_db if isinstance(snr_db, SnrCondition) else SnrCondition.parse(snr_db)
    clean_kwargs = dict(
        utterance_id=speech.utterance_id,
        segment_index=speech.segment_index,
        speaker_id=speech.speaker_id,
        group_key=speech.group_key,
    )
    s = np.asarray(speech.samples, dtype=np.float64)
    if snr.is_clean:
        return ConditionedSegment(samples=s.copy(), noise_name=None, snr=CLEAN, **clean_kwargs)
    if noise_excerpt is None or noise_excerpt.shape != s.shape:
        raise ArgumentError("noise excerpt must match the speech length")
    p_s = float(np.mean(s * s))
    if p_s <= 0.0:
        raise DegenerateInputError(f"{speech.group_key}: zero-power speech segment")
    d = np.asarray(noise_excerpt, dtype=np.float64)
    p_n = float(np.mean(d * d))
    if p_n <= 0.0:
        raise DegenerateInputError(f"{speech.group_key}: zero-power noise excerpt")
    g = noise_gain_for_snr(p_s, p_n, snr.db)
    mixed = s + g * d
    peak = float(np.max(np.abs(mixed)))
    rescale = 1.0
    if peak > 1.0:
        rescale = 1.0 / peak
        mixed = mixed * rescale
    return ConditionedSegment(
        samples=mixed,
        noise_name=noise_name,
        snr=snr,
        rescale_factor=rescale,
        noise_gain=g,
        noise_offset=noise_offset,
        **clean_kwargs,
    )


def realized_snr_db(speech: np.ndarray, excerpt: np.ndarray, mixed: ConditionedSegment) -> float:
    """SNR of the stored mixture measured from its two scaled components."""
    speech_part = mixed.rescale_factor * np.asarray(speech, dtype=np.float64)
    noise_part = mixed.rescale_factor * mixed.noise_gain * np.asarray(excerpt, dtype=np.float64)
    return 10.0 * math.log10(np.mean(speech_part**2) / np.mean(noise_part**2))


def excerpt_seed(rng_seed: int, group_key: str, noise_name: str, snr: SnrCondition) -> int:
    return derive_seed(rng_seed, group_key, noise_name, snr.label)


def iter_multicondition(
    clean_segments: Iterable[dsp.Segment],
    noises: Sequence[NoiseSource],
    snrs: Sequence[SnrCondition],
    rng_seed: int,
) -> Iterator[ConditionedSegment]:
    """Streaming form of :func:`build_multicondition`."""
    levels = [s for s in snrs if not s.is_clean]
    if levels and not noises:
        raise ArgumentError("SNR levels requested but no noise sources given")
    for noise in noises:
        if not noise.filtered:
            raise ArgumentError(f"noise {noise.name!r} must be high-pass filtered before mixing")
    for seg in clean_segments:
        if not seg.is_speech:
            raise ArgumentError(f"{seg.group_key} is not a speech segment")
        yield mix_at_snr(seg, None, CLEAN)
        n = seg.samples.size
        for noise in noises:
            for snr in levels:
                offset = draw_noise_offset(noise, n, excerpt_seed(rng_seed, seg.group_key, noise.name, snr))
                excerpt = noise.samples[offset : offset + n]
                yield mix_at_snr(seg, excerpt, snr, noise_name=noise.name, noise_offset=offset)


def build_multicondition(
    clean_segments: Sequence[dsp.Segment],
    noises: Sequence[NoiseSource],
    snrs: Sequence[SnrCondition],
    rng_seed: int,
) -> list[ConditionedSegment]:
    """One clean version plus every noise x SNR version of each clean segment."""
    return list(iter_multicondition(clean_segments, noises, snrs, rng_seed))


def decimate_per_speaker(manifest: Sequence, target_seconds: int = 600) -> list:
    """Keep each speaker's first ``target_seconds`` clean segments and their versions.

    Segments are ordered by (utterance, segment index). Works on any records
    exposing speaker_id, utterance_id, segment_index, group_key and noise_name.
    """
    clean_by_speaker = defaultdict(list)
    for rec in manifest:
        if rec.noise_name is None:
            clean_by_speaker[rec.speaker_id].append((rec.utterance_id, rec.segment_index, rec.group_key))
    keep = set()
    for items in clean_by_speaker.values():
        items.sort()
        keep.update(key for _, _, key in items[:target_seconds])
    return [rec for rec in manifest if rec.group_key in keep]


# ---------------------------------------------------------------- files


def load_noise_bank(directory: str | Path, cutoff_hz: float = 60.0) -> list[NoiseSource]:
    """Every ``*.wav`` in ``directory`` becomes a filtered NoiseSource named by its stem."""
    paths = sorted(Path(directory).glob("*.wav"))
    if not paths:
        raise FormatError(f"no WAV files in noise bank {directory}")
    noises = []
    for path in paths:
        clip = dsp.resample(dsp.to_mono(dsp.load_wav(path)), dsp.CANONICAL_RATE)
        if clip.duration_s < 1.0:
            raise FormatError(f"noise {path.stem!r} is shorter than 1 second")
        noises.append(highpass_noise(NoiseSource(path.stem, clip.samples), cutoff_hz))
    return noises


def write_manifest(path: str | Path, records: Iterable[ManifestRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(asdict(rec), sort_keys=True) + "\n")


def read_manifest(path: str | Path) -> list[ManifestRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                records.append(ManifestRecord(**json.loads(line)))
            except (TypeError, json.JSONDecodeError) as exc:
                raise FormatError(f"{path}:{lineno}: bad manifest record ({exc})") from exc
    return records
