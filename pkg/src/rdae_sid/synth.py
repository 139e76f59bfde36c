"""Deterministic synthetic speakers and noises for desk-scale runs.

A "speaker" is a jittered glottal pulse train at a fixed f0 shaped by three
second-order resonators (the formants). Utterances differ only in their seeded
jitter and amplitude envelope, so speaker identity lives in f0 and formants.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy import signal

from . import dsp
from ._seeding import rng_for
from .augmentation import NoiseSource
from .errors import ArgumentError

NOISE_KINDS = ("white", "pink", "babble")


@dataclass(frozen=True)
class SyntheticSpeakerProfile:
    name: str
    f0: float
    formants: tuple[float, float, float]
    bandwidths: tuple[float, float, float] = (80.0, 100.0, 120.0)
    jitter: float = 0.01

    def validate(self) -> None:
        if not 80.0 <= self.f0 <= 300.0:
            raise ArgumentError(f"{self.name}: f0 {self.f0} outside [80, 300] Hz")
        if len(self.formants) != 3 or len(self.bandwidths) != 3:
            raise ArgumentError(f"{self.name}: need exactly 3 formants and bandwidths")
        if not all(a < b for a, b in zip(self.formants, self.formants[1:])):
            raise ArgumentError(f"{self.name}: formants must be strictly increasing")
        if self.formants[-1] >= 8000.0 or self.formants[0] <= 0:
            raise ArgumentError(f"{self.name}: formants must lie in (0, 8000) Hz")
        if any(b <= 0 for b in self.bandwidths) or not 0 <= self.jitter < 0.5:
            raise ArgumentError(f"{self.name}: bad bandwidth or jitter")


def make_profiles(n_speakers: int, seed: int) -> list[SyntheticSpeakerProfile]:
    """Spread f0 and formants so that speakers are distinguishable but overlapping."""
    if n_speakers < 1:
        raise ArgumentError("need at least one speaker")
    rng = rng_for("profiles", seed, n_speakers)
    f0s = np.linspace(95.0, 250.0, n_speakers) if n_speakers > 1 else np.array([150.0])
    f0s = rng.permutation(f0s) + rng.uniform(-4, 4, n_speakers)
    profiles = []
    for i in range(n_speakers):
        f1 = rng.uniform(350, 850)
        f2 = rng.uniform(max(f1 + 300, 1000), 2300)
        f3 = rng.uniform(2500, 3500)
        bws = tuple(float(b) for b in rng.uniform([60, 80, 100], [100, 140, 180]))
        profiles.append(
            SyntheticSpeakerProfile(
                name=f"spk{i:02d}",
                f0=float(np.clip(f0s[i], 80, 300)),
                formants=(float(f1), float(f2), float(f3)),
                bandwidths=bws,
                jitter=0.01,
            )
        )
    return profiles


def resonator(freq: float, bandwidth: float, sample_rate: int) -> tuple[np.ndarray, np.ndarray]:
    """Two-pole resonator; the ``1 - r`` numerator keeps the peak gain near unity."""
    r = np.exp(-np.pi * bandwidth / sample_rate)
    theta = 2 * np.pi * freq / sample_rate
    b = np.array([1.0 - r])
    a = np.array([1.0, -2.0 * r * np.cos(theta), r * r])
    return b, a


def pulse_train(f0: float, n: int, jitter: float, rng: np.random.Generator, sample_rate: int) -> np.ndarray:
    x = np.zeros(n)
    period = sample_rate / f0
    t = rng.uniform(0, period)
    while t < n:
        x[int(t)] = 1.0
        t += period * (1.0 + jitter * rng.standard_normal())
    return x


def slow_envelope(n: int, rng: np.random.Generator, sample_rate: int) -> np.ndarray:
    t = np.arange(n) / sample_rate
    env = np.zeros(n)
    for _ in range(3):
        env += rng.uniform(0.3, 1.0) * np.sin(2 * np.pi * rng.uniform(0.5, 4.0) * t + rng.uniform(0, 2 * np.pi))
    env = (env - env.min()) / max(env.max() - env.min(), 1e-12)
    return 0.25 + 0.75 * env


def voice(profile: SyntheticSpeakerProfile, n: int, rng: np.random.Generator, sample_rate: int) -> np.ndarray:
    x = pulse_train(profile.f0, n, profile.jitter, rng, sample_rate)
    for f, bw in zip(profile.formants, profile.bandwidths):
        b, a = resonator(f, bw, sample_rate)
        x = signal.lfilter(b, a, x)
    return x


def synth_utterance(
    profile: SyntheticSpeakerProfile,
    duration_s: float,
    seed: int,
    sample_rate: int = dsp.CANONICAL_RATE,
    utterance_id: str | None = None,
) -> dsp.AudioClip:
    profile.validate()
    if duration_s < 1.0:
        raise ArgumentError("utterance must last at least 1 second")
    n = int(round(duration_s * sample_rate))
    rng = rng_for("utterance", profile, seed)
    x = voice(profile, n, rng, sample_rate) * slow_envelope(n, rng, sample_rate)
    clip = dsp.AudioClip(
        samples=x,
        sample_rate_hz=sample_rate,
        utterance_id=utterance_id or f"{profile.name}_u{seed}",
        speaker_id=profile.name,
    )
    return dsp.peak_normalize(clip)


def synth_noise(kind: str, duration_s: float, seed: int, sample_rate: int = dsp.CANONICAL_RATE) -> NoiseSource:
    if kind not in NOISE_KINDS:
        raise ArgumentError(f"unknown noise kind {kind!r}; expected one of {NOISE_KINDS}")
    if duration_s < 10.0:
        raise ArgumentError("synthetic noise must last at least 10 seconds")
    n = int(round(duration_s * sample_rate))
    rng = rng_for("noise", kind, seed)
    if kind == "white":
        x = rng.standard_normal(n)
    elif kind == "pink":
        spec = np.fft.rfft(rng.standard_normal(n))
        f = np.fft.rfftfreq(n, 1.0 / sample_rate)
        shaping = np.zeros_like(f)
        shaping[1:] = 1.0 / np.sqrt(f[1:])
        x = np.fft.irfft(spec * shaping, n)
    else:
        x = np.zeros(n)
        for i, prof in enumerate(make_profiles(8, int(rng.integers(1 << 30)))):
            talker = voice(prof, n, rng, sample_rate) * slow_envelope(n, rng, sample_rate)
            x += talker / (np.std(talker) + 1e-12)
    x = 0.3 * x / np.max(np.abs(x))
    return NoiseSource(name=f"{kind}", samples=x, filtered=False, sample_rate_hz=sample_rate)


def write_corpus(
    out_dir: str | Path,
    n_speakers: int,
    n_utterances: int,
    seed: int,
    duration_s: float = 6.0,
    noise_kinds: tuple[str, ...] = NOISE_KINDS,
    noise_duration_s: float = 60.0,
) -> Path:
    """Write speech WAVs, a noise bank and ``corpus.jsonl``; returns the manifest path."""
    out = Path(out_dir)
    (out / "speech").mkdir(parents=True, exist_ok=True)
    (out / "noises").mkdir(parents=True, exist_ok=True)
    rows = []
    for profile in make_profiles(n_speakers, seed):
        spk_dir = out / "speech" / profile.name
        spk_dir.mkdir(exist_ok=True)
        for u in range(n_utterances):
            utt_id = f"{profile.name}_u{u:03d}"
            clip = synth_utterance(profile, duration_s, seed * 100003 + u, utterance_id=utt_id)
            rel = Path("speech") / profile.name / f"{utt_id}.wav"
            dsp.write_wav(out / rel, clip)
            rows.append({"path": rel.as_posix(), "speaker_id": profile.name, "utterance_id": utt_id})
    for kind in noise_kinds:
        noise = synth_noise(kind, noise_duration_s, seed)
        dsp.write_wav(out / "noises" / f"{noise.name}.wav", dsp.AudioClip(noise.samples, noise.sample_rate_hz))
    manifest = out / "corpus.jsonl"
    with open(manifest, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    with open(out / "profiles.json", "w", encoding="utf-8") as fh:
        json.dump([asdict(p) for p in make_profiles(n_speakers, seed)], fh, indent=2, sort_keys=True)
    return manifest
