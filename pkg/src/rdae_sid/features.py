"""Log-mel spectrograms, training-set normalization and handcrafted features."""

from __future__ import annotations

import functools
import hashlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import fft as sp_fft
from scipy import signal

from .errors import ArgumentError

SAMPLE_RATE = 16000
SEGMENT_SAMPLES = 16000
WINDOW_SAMPLES = 1120  # 70 ms
HOP_SAMPLES = 560  # 50 % overlap
N_FFT = 2048
N_BINS = N_FFT // 2 + 1
N_FRAMES = (SEGMENT_SAMPLES - WINDOW_SAMPLES) // HOP_SAMPLES + 1
N_MELS = 140
LOG_FLOOR = 1e-10
STD_FLOOR = 1e-8

SPEC_SHAPE = (N_FRAMES, N_MELS)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@functools.lru_cache(maxsize=8)
def mel_filterbank(
    n_mels: int = N_MELS,
    n_fft: int = N_FFT,
    sample_rate: int = SAMPLE_RATE,
    fmin: float = 0.0,
    fmax: float = 8000.0,
) -> np.ndarray:
    """Triangular HTK-mel filters with unit peaks, shape ``(n_mels, n_fft//2 + 1)``."""
    edges_hz = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    bin_hz = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lower, center, upper = edges_hz[:-2, None], edges_hz[1:-1, None], edges_hz[2:, None]
    rising = (bin_hz - lower) / (center - lower)
    falling = (upper - bin_hz) / (upper - center)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    fb.setflags(write=False)
    return fb


def mel_band_centers(n_mels: int = N_MELS, fmin: float = 0.0, fmax: float = 8000.0) -> np.ndarray:
    return mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))[1:-1]


@functools.lru_cache(maxsize=1)
def _hann() -> np.ndarray:
    w = signal.get_window("hann", WINDOW_SAMPLES)
    w.setflags(write=False)
    return w


def stft_frames(segment: np.ndarray) -> np.ndarray:
    x = np.asarray(segment, dtype=np.float64)
    if x.shape != (SEGMENT_SAMPLES,):
        raise ArgumentError(f"segment must have exactly {SEGMENT_SAMPLES} samples, got {x.shape}")
    frames = np.lib.stride_tricks.sliding_window_view(x, WINDOW_SAMPLES)[::HOP_SAMPLES]
    return frames * _hann()


def stft_power(segment: np.ndarray) -> np.ndarray:
    """|rfft|^2 of Hann-windowed 70 ms frames, 50 % hop, zero-padded to 2048: (27, 1025)."""
    spectrum = np.fft.rfft(stft_frames(segment), n=N_FFT, axis=1)
    return spectrum.real**2 + spectrum.imag**2


def mel_project(power: np.ndarray, filterbank: np.ndarray | None = None) -> np.ndarray:
    """Mel band energies followed by ``log(x + 1e-10)``."""
    fb = mel_filterbank() if filterbank is None else filterbank
    power = np.asarray(power, dtype=np.float64)
    if power.ndim != 2 or power.shape[1] != fb.shape[1]:
        raise ArgumentError(f"power {power.shape} does not match filterbank {fb.shape}")
    return np.log(power @ fb.T + LOG_FLOOR)


def log_mel_spectrogram(segment: np.ndarray) -> np.ndarray:
    return mel_project(stft_power(segment))


@dataclass
class MelSpectrogram:
    values: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.values.shape != SPEC_SHAPE:
            raise ArgumentError(f"mel spectrogram must be {SPEC_SHAPE}, got {self.values.shape}")


# ---------------------------------------------------------------- normalization


@dataclass(frozen=True)
class NormStats:
    """Standardization constants fitted on one training subset.

    ``mean``/``std`` are scalars for the global scope, arrays for per-bin scope.
    ``source_id`` fingerprints the training keys the stats came from.
    """

    mean: float | np.ndarray
    std: float | np.ndarray
    scope: str = "global"
    source_id: str = ""

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def to_json(self) -> dict:
        def enc(v):
            return v.tolist() if isinstance(v, np.ndarray) else float(v)

        return {"mean": enc(self.mean), "std": enc(self.std), "scope": self.scope, "source_id": self.source_id}

    @classmethod
    def from_json(cls, d: dict) -> "NormStats":
        def dec(v):
            return np.asarray(v, dtype=np.float64) if isinstance(v, list) else float(v)

        return cls(dec(d["mean"]), dec(d["std"]), d.get("scope", "global"), d.get("source_id", ""))


def keys_fingerprint(keys: Sequence[str]) -> str:
    h = hashlib.sha256()
    for k in sorted(keys):
        h.update(k.encode("utf-8"))
        h.update(b"\0")
    return h.hexdigest()[:16]


def fit_norm_stats(
    train: Sequence[MelSpectrogram] | np.ndarray,
    per_bin: bool = False,
    source_keys: Sequence[str] | None = None,
) -> NormStats:
    """Mean and std over every entry of every training matrix (or per bin)."""
    if isinstance(train, np.ndarray):
        stack = np.asarray(train, dtype=np.float64)
    else:
        stack = np.stack([m.values for m in train]).astype(np.float64) if len(train) else np.zeros((0,))
    if stack.shape[0] == 0:
        raise ArgumentError("cannot fit normalization on an empty training set")
    source_id = keys_fingerprint(source_keys) if source_keys is not None else ""
    if per_bin:
        mean = stack.mean(axis=0)
        std = np.maximum(stack.std(axis=0), STD_FLOOR)
        return NormStats(mean, std, "per-bin", source_id)
    mean = float(stack.mean())
    std = max(float(stack.std()), STD_FLOOR)
    return NormStats(mean, std, "global", source_id)


def apply_norm(x: np.ndarray, stats: NormStats) -> np.ndarray:
    return stats.apply(x)


# ---------------------------------------------------------------- handcrafted

HC_FRAME = 400  # 25 ms
HC_HOP = 160  # 10 ms
HC_NFFT = 512
PITCH_FRAME = 640  # 40 ms, centred on the 25 ms grid
PITCH_MIN_HZ, PITCH_MAX_HZ = 50.0, 400.0
VOICING_THRESHOLD = 0.3
LPC_ORDER = 12
FORMANT_MAX_BW = 400.0
FORMANT_MIN_HZ = 90.0
N_MFCC = 13
N_MFCC_BANDS = 26

_FAMILIES = ["pitch", "F1", "F2", "F3"] + [f"mfcc{i}" for i in range(N_MFCC)] + ["log_energy"]
HANDCRAFTED_LAYOUT = (
    [f"{n}_mean" for n in _FAMILIES]
    + [f"{n}_std" for n in _FAMILIES]
    + ["voicing_flag", "voiced_fraction", "voicing_strength", "zero_crossing_rate"]
)
HANDCRAFTED_DIM = len(HANDCRAFTED_LAYOUT)


def _frames(x: np.ndarray, frame: int = HC_FRAME, hop: int = HC_HOP) -> np.ndarray:
    return np.lib.stride_tricks.sliding_window_view(x, frame)[::hop]


def frame_pitch(frames: np.ndarray, sample_rate: int = SAMPLE_RATE) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame pitch (Hz, 0 when unvoiced) and normalized-autocorrelation peak.

    The lag search covers 50-400 Hz. Among lags within 80 % of the best
    correlation the shortest wins, which suppresses sub-octave picks.
    """
    n = frames.shape[1]
    x = frames - frames.mean(axis=1, keepdims=True)
    nfft = 1 << int(np.ceil(np.log2(2 * n)))
    spec = np.fft.rfft(x, nfft, axis=1)
    acf = np.fft.irfft(spec.real**2 + spec.imag**2, nfft, axis=1)[:, :n]
    lag_lo = int(np.floor(sample_rate / PITCH_MAX_HZ))
    lag_hi = min(int(np.ceil(sample_rate / PITCH_MIN_HZ)), n - 2)
    lags = np.arange(lag_lo, lag_hi + 1)
    cs = np.concatenate([np.zeros((x.shape[0], 1)), np.cumsum(x * x, axis=1)], axis=1)
    head = cs[:, n - lags]
    tail = cs[:, n : n + 1] - cs[:, lags]
    denom = np.sqrt(head * tail)
    with np.errstate(invalid="ignore", divide="ignore"):
        ncc = np.where(denom > 1e-20, acf[:, lags] / denom, 0.0)
    best = ncc.max(axis=1)
    candidate = ncc >= 0.8 * best[:, None]
    idx = np.argmax(candidate, axis=1)
    # climb to the local maximum right of the first candidate lag
    rows = np.arange(x.shape[0])
    for _ in range(lags.size):
        nxt = np.minimum(idx + 1, lags.size - 1)
        step = ncc[rows, nxt] > ncc[rows, idx]
        if not step.any():
            break
        idx = np.where(step, nxt, idx)
    peak = ncc[rows, idx]
    left = ncc[rows, np.maximum(idx - 1, 0)]
    right = ncc[rows, np.minimum(idx + 1, lags.size - 1)]
    curvature = left - 2 * peak + right
    with np.errstate(invalid="ignore", divide="ignore"):
        shift = np.where(np.abs(curvature) > 1e-12, 0.5 * (left - right) / curvature, 0.0)
    shift = np.clip(shift, -0.5, 0.5)
    lag = lags[idx] + shift
    voiced = (peak > VOICING_THRESHOLD) & (best > 0)
    pitch = np.where(voiced, sample_rate / lag, 0.0)
    return pitch, np.where(best > 0, peak, 0.0)


def lpc_coefficients(frames: np.ndarray, order: int = LPC_ORDER) -> tuple[np.ndarray, np.ndarray]:
    """Autocorrelation-method LPC via Levinson-Durbin, batched over frames.

    Returns (coefficients with a[0] = 1, valid mask). Frames without energy are
    flagged invalid.
    """
    n_frames, n = frames.shape
    r = np.stack([np.sum(frames[:, : n - k] * frames[:, k:], axis=1) for k in range(order + 1)], axis=1)
    valid = r[:, 0] > 1e-12
    r = np.where(valid[:, None], r, 0.0)
    r[:, 0] = np.where(valid, r[:, 0] * (1 + 1e-9), 1.0)
    a = np.zeros((n_frames, order + 1))
    a[:, 0] = 1.0
    err = r[:, 0].copy()
    for i in range(1, order + 1):
        acc = r[:, i] + np.sum(a[:, 1:i] * r[:, i - 1 : 0 : -1], axis=1) if i > 1 else r[:, 1].copy()
        k = -acc / err
        prev = a.copy()
        a[:, 1:i] = prev[:, 1:i] + k[:, None] * prev[:, i - 1 : 0 : -1]
        a[:, i] = k
        err = err * (1.0 - k * k)
        err = np.maximum(err, 1e-300)
    return a, valid


def frame_formants(frames: np.ndarray, sample_rate: int = SAMPLE_RATE, n_formants: int = 3) -> np.ndarray:
    """First formants (Hz) from LPC pole angles; NaN where fewer are found."""
    emphasized = np.concatenate([frames[:, :1], frames[:, 1:] - 0.97 * frames[:, :-1]], axis=1)
    windowed = emphasized * np.hamming(frames.shape[1])
    a, valid = lpc_coefficients(windowed)
    order = a.shape[1] - 1
    companion = np.zeros((frames.shape[0], order, order))
    companion[:, 0, :] = -a[:, 1:]
    companion[:, np.arange(1, order), np.arange(order - 1)] = 1.0
    roots = np.linalg.eigvals(companion)
    out = np.full((frames.shape[0], n_formants), np.nan)
    for i in np.flatnonzero(valid):
        z = roots[i]
        z = z[z.imag > 0]
        freq = np.angle(z) * sample_rate / (2 * np.pi)
        with np.errstate(divide="ignore"):
            bw = -sample_rate / np.pi * np.log(np.abs(z))
        keep = np.sort(freq[(bw < FORMANT_MAX_BW) & (freq > FORMANT_MIN_HZ)])
        k = min(n_formants, keep.size)
        out[i, :k] = keep[:k]
    return out


def frame_mfcc(frames: np.ndarray, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    windowed = frames * np.hamming(frames.shape[1])
    spec = np.fft.rfft(windowed, HC_NFFT, axis=1)
    power = spec.real**2 + spec.imag**2
    fb = mel_filterbank(N_MFCC_BANDS, HC_NFFT, sample_rate, 0.0, sample_rate / 2)
    logmel = np.log(power @ fb.T + LOG_FLOOR)
    return sp_fft.dct(logmel, type=2, norm="ortho", axis=1)[:, :N_MFCC]


def handcrafted_features(segment: np.ndarray, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Fixed 40-dim vector; see ``HANDCRAFTED_LAYOUT`` for the slot order.

    Pitch and formant statistics use voiced frames only and are 0 when the
    segment has none. MFCC and energy statistics use all frames.
    """
    x = np.asarray(segment, dtype=np.float64)
    if x.ndim != 1 or x.size < HC_FRAME:
        raise ArgumentError(f"segment too short for handcrafted features: {x.shape}")
    frames = _frames(x)
    pad = (PITCH_FRAME - HC_FRAME) // 2
    pitch, strength = frame_pitch(_frames(np.pad(x, pad), PITCH_FRAME), sample_rate)
    voiced = pitch > 0
    log_energy = np.log(np.sum(frames * frames, axis=1) + LOG_FLOOR)
    mfcc = frame_mfcc(frames, sample_rate)
    zcr = np.mean(np.abs(np.diff(np.signbit(frames).astype(np.int8), axis=1)), axis=1)

    if voiced.any():
        formants = frame_formants(frames[voiced], sample_rate)
        vp = pitch[voiced]
        pitch_stats = (vp.mean(), vp.std())
        form_mean, form_std = np.zeros(3), np.zeros(3)
        for j in range(3):
            col = formants[:, j]
            col = col[np.isfinite(col)]
            if col.size:
                form_mean[j], form_std[j] = col.mean(), col.std()
    else:
        pitch_stats = (0.0, 0.0)
        form_mean, form_std = np.zeros(3), np.zeros(3)

    vec = np.concatenate(
        [
            [pitch_stats[0]],
            form_mean,
            mfcc.mean(axis=0),
            [log_energy.mean()],
            [pitch_stats[1]],
            form_std,
            mfcc.std(axis=0),
            [log_energy.std()],
            [float(voiced.any()), float(voiced.mean()), float(strength.mean()), float(zcr.mean())],
        ]
    )
    assert vec.size == HANDCRAFTED_DIM
    return vec
