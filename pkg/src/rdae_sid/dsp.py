"""Audio ingestion: WAV I/O, mono downmix, resampling, peak normalization and
1-second segmentation with an energy VAD.

Everything here is a pure function of its inputs. The sinc kernel tables are
memoized and never mutated after construction.
"""

from __future__ import annotations

import functools
import math
import struct
import wave
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import signal

from .errors import ArgumentError, FormatError, UnsupportedFormatError

CANONICAL_RATE = 16000

_WAVE_FORMATS = {
    0x0001: "PCM",
    0x0003: "IEEE float",
    0x0006: "A-law",
    0x0007: "mu-law",
    0xFFFE: "extensible",
}


@dataclass(frozen=True)
class AudioClip:
    """Waveform plus provenance.

    ``samples`` is 1-D for mono, ``(frames, channels)`` otherwise.
    """

    samples: np.ndarray
    sample_rate_hz: int
    utterance_id: str = ""
    speaker_id: str | None = None
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if int(self.sample_rate_hz) <= 0:
            raise ArgumentError(f"sample rate must be positive, got {self.sample_rate_hz}")

    @property
    def n_channels(self) -> int:
        return 1 if self.samples.ndim == 1 else self.samples.shape[1]

    @property
    def n_frames(self) -> int:
        return self.samples.shape[0]

    @property
    def duration_s(self) -> float:
        return self.n_frames / self.sample_rate_hz


@dataclass(frozen=True)
class Segment:
    samples: np.ndarray
    utterance_id: str
    segment_index: int
    is_speech: bool
    speaker_id: str | None = None
    sample_rate_hz: int = CANONICAL_RATE

    @property
    def group_key(self) -> str:
        return f"{self.utterance_id}#{self.segment_index:05d}"


@dataclass(frozen=True)
class VadConfig:
    frame_ms: float = 25.0
    hop_ms: float = 10.0
    min_active_fraction: float = 0.25
    relative_threshold: float = 0.05
    reference_percentile: float = 90.0
    min_rms: float = 1e-4


# ---------------------------------------------------------------- WAV I/O


def _scan_fmt_chunk(raw: bytes) -> tuple[int, int, int]:
    """Return (format tag, channels, bits per sample) from a RIFF/WAVE buffer."""
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise FormatError("not a RIFF/WAVE file")
    pos = 12
    while pos + 8 <= len(raw):
        chunk_id = raw[pos : pos + 4]
        (size,) = struct.unpack("<I", raw[pos + 4 : pos + 8])
        if chunk_id == b"fmt ":
            if size < 16 or pos + 8 + size > len(raw):
                raise FormatError("truncated fmt chunk")
            tag, channels, _, _, _, bits = struct.unpack("<HHIIHH", raw[pos + 8 : pos + 24])
            if tag == 0xFFFE and size >= 40:
                # WAVEFORMATEXTENSIBLE: real tag is the first two bytes of the subformat GUID
                (tag,) = struct.unpack("<H", raw[pos + 32 : pos + 34])
            return tag, channels, bits
        pos += 8 + size + (size & 1)
    raise FormatError("missing fmt chunk")


def load_wav(path: str | Path, utterance_id: str | None = None, speaker_id: str | None = None) -> AudioClip:
    """Read a PCM16 WAV file; samples are scaled by 1/32768."""
    path = Path(path)
    raw = path.read_bytes()
    tag, channels, bits = _scan_fmt_chunk(raw)
    if tag != 0x0001:
        name = _WAVE_FORMATS.get(tag, f"format tag 0x{tag:04x}")
        raise UnsupportedFormatError(f"{path.name}: unsupported encoding {name} ({bits}-bit)")
    if bits != 16:
        raise UnsupportedFormatError(f"{path.name}: unsupported encoding {bits}-bit PCM")
    if channels not in (1, 2):
        raise UnsupportedFormatError(f"{path.name}: {channels} channels (only 1 or 2 supported)")
    try:
        with wave.open(str(path), "rb") as wf:
            rate = wf.getframerate()
            frames = wf.readframes(wf.getnframes())
    except (wave.Error, EOFError) as exc:
        raise FormatError(f"{path.name}: {exc}") from exc
    data = np.frombuffer(frames, dtype="<i2").astype(np.float64) / 32768.0
    if channels == 2:
        data = data[: (data.size // 2) * 2].reshape(-1, 2)
    return AudioClip(
        samples=data,
        sample_rate_hz=rate,
        utterance_id=utterance_id if utterance_id is not None else path.stem,
        speaker_id=speaker_id,
    )


def write_wav(path: str | Path, clip: AudioClip) -> None:
    """Write PCM16. Values are clipped to the representable range."""
    pcm = np.clip(np.round(np.asarray(clip.samples) * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(clip.n_channels)
        wf.setsampwidth(2)
        wf.setframerate(int(clip.sample_rate_hz))
        wf.writeframes(pcm.tobytes())


# ---------------------------------------------------------------- conversions


def to_mono(clip: AudioClip) -> AudioClip:
    if clip.samples.ndim == 1:
        return clip
    if clip.n_channels > 2:
        raise UnsupportedFormatError(f"{clip.n_channels} channels (only 1 or 2 supported)")
    return replace(clip, samples=clip.samples.mean(axis=1))


def resampled_length(n: int, source_hz: int, target_hz: int) -> int:
    """round(n * target / source), halves rounded up, in exact integer arithmetic."""
    return (2 * n * target_hz + source_hz) // (2 * source_hz)


@functools.lru_cache(maxsize=16)
def _sinc_kernel(up: int, down: int, source_hz: int, target_hz: int) -> np.ndarray:
    # Passband to 0.45 * min rate, stopband from the Nyquist of the slower side.
    # Tap count comes from the Kaiser estimate for beta=8.6 (about 86 dB).
    base = min(source_hz, target_hz)
    f_pass, f_stop = 0.45 * base, 0.5 * base
    fs_up = source_hz * up
    atten_db = 8.6 / 0.1102 + 8.7
    transition = 2 * np.pi * (f_stop - f_pass) / fs_up
    n_taps = int(math.ceil((atten_db - 7.95) / (2.285 * transition)))
    n_taps += 1 - n_taps % 2
    taps = signal.firwin(n_taps, 0.5 * (f_pass + f_stop), window=("kaiser", 8.6), fs=fs_up)
    taps.setflags(write=False)
    return taps


def resample(clip: AudioClip, target_hz: int) -> AudioClip:
    """Band-limited polyphase resampling with a Kaiser-windowed sinc."""
    if int(target_hz) <= 0:
        raise ArgumentError(f"target rate must be positive, got {target_hz}")
    if clip.samples.ndim != 1:
        raise ArgumentError("resample expects a mono clip")
    source_hz = int(clip.sample_rate_hz)
    target_hz = int(target_hz)
    if source_hz == target_hz:
        return clip
    g = math.gcd(source_hz, target_hz)
    up, down = target_hz // g, source_hz // g
    n_out = resampled_length(clip.n_frames, source_hz, target_hz)
    kernel = _sinc_kernel(up, down, source_hz, target_hz)
    y = signal.resample_poly(clip.samples.astype(np.float64), up, down, window=np.array(kernel))
    if y.size >= n_out:
        y = y[:n_out]
    else:
        y = np.concatenate([y, np.zeros(n_out - y.size)])
    return replace(clip, samples=y, sample_rate_hz=target_hz)


def peak_normalize(clip: AudioClip) -> AudioClip:
    peak = float(np.max(np.abs(clip.samples))) if clip.samples.size else 0.0
    if peak == 0.0:
        return clip
    return replace(clip, samples=clip.samples / peak)


def canonicalize(clip: AudioClip, target_hz: int = CANONICAL_RATE) -> AudioClip:
    """Downmix, resample, then peak-normalize the whole utterance."""
    return peak_normalize(resample(to_mono(clip), target_hz))


# ---------------------------------------------------------------- VAD


def frame_energies(x: np.ndarray, frame_len: int, hop: int) -> np.ndarray:
    if x.size < frame_len:
        return np.zeros(0)
    frames = np.lib.stride_tricks.sliding_window_view(x, frame_len)[::hop]
    return np.mean(frames * frames, axis=1)


def segment_and_vad(clip: AudioClip, config: VadConfig | None = None) -> list[Segment]:
    """Split into whole seconds and attach a speech/non-speech decision to each.

    A second is speech when enough of its frames reach a fraction of the
    utterance's high-percentile frame energy and its RMS clears an absolute floor.
    Non-speech segments stay in the list; callers filter on ``is_speech``.
    """
    config = config or VadConfig()
    if clip.samples.ndim != 1:
        raise ArgumentError("segment_and_vad expects a mono clip")
    rate = int(clip.sample_rate_hz)
    n_seg = clip.n_frames // rate
    if n_seg == 0:
        return []
    frame_len = int(round(config.frame_ms * rate / 1000))
    hop = int(round(config.hop_ms * rate / 1000))
    x = np.asarray(clip.samples, dtype=np.float64)
    utterance_energy = frame_energies(x[: n_seg * rate], frame_len, hop)
    reference = float(np.percentile(utterance_energy, config.reference_percentile))
    threshold = config.relative_threshold * reference

    segments = []
    for i in range(n_seg):
        chunk = x[i * rate : (i + 1) * rate]
        energy = frame_energies(chunk, frame_len, hop)
        active = float(np.mean(energy >= threshold))
        rms = math.sqrt(float(np.mean(chunk * chunk)))
        is_speech = active >= config.min_active_fraction and rms >= config.min_rms
        segments.append(
            Segment(
                samples=chunk.copy(),
                utterance_id=clip.utterance_id,
                segment_index=i,
                is_speech=bool(is_speech),
                speaker_id=clip.speaker_id,
                sample_rate_hz=rate,
            )
        )
    return segments
