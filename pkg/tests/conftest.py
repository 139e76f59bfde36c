import numpy as np
import pytest

from rdae_sid import dsp
from rdae_sid.cache import FeatureSet


def sine(freq, rate, seconds=1.0, amp=1.0, phase=0.0):
    t = np.arange(int(round(seconds * rate))) / rate
    return amp * np.sin(2 * np.pi * freq * t + phase)


def rms(x):
    return float(np.sqrt(np.mean(np.asarray(x, dtype=np.float64) ** 2)))


def central_difference(f, x, h=1e-5):
    """Numerical gradient of scalar ``f()`` w.r.t. array ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = x[i]
        x[i] = orig + h
        fp = f()
        x[i] = orig - h
        fm = f()
        x[i] = orig
        g[i] = (fp - fm) / (2 * h)
    return g


def relative_error(a, n, floor=1e-6):
    """Elementwise |a - n| / max(|a|, |n|, floor); the floor keeps tiny gradients from dominating."""
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def make_feature_set(n_speakers=3, groups_per_speaker=6, versions=(("clean", None), ("0", "white")), shape=(4,), seed=0, kind="mel"):
    """Small synthetic FeatureSet with class-dependent means."""
    rng = np.random.default_rng(seed)
    records, values = [], []
    for s in range(n_speakers):
        for g in range(groups_per_speaker):
            key = f"spk{s}_u{g:03d}#00000"
            for snr, noise in versions:
                records.append(
                    {
                        "group_key": key,
                        "speaker_id": f"spk{s}",
                        "utterance_id": f"spk{s}_u{g:03d}",
                        "segment_index": 0,
                        "noise_name": noise,
                        "snr_db": snr,
                        "rescale_factor": 1.0,
                        "cache_offset": len(records),
                    }
                )
                values.append(s + rng.standard_normal(shape))
    return FeatureSet(np.asarray(values, dtype=np.float32), records, kind)


@pytest.fixture
def voiced_clip():
    """2.5 s of a 100 Hz pulse train through a resonator, peak normalized."""
    from scipy import signal

    rate = dsp.CANONICAL_RATE
    n = int(2.5 * rate)
    x = np.zeros(n)
    x[:: rate // 100] = 1.0
    r = np.exp(-np.pi * 100 / rate)
    x = signal.lfilter([1 - r], [1, -2 * r * np.cos(2 * np.pi * 700 / rate), r * r], x)
    return dsp.peak_normalize(dsp.AudioClip(x, rate, utterance_id="u0", speaker_id="s0"))


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
