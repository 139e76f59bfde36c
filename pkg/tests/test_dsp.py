import struct
import wave

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rdae_sid import dsp
from rdae_sid.errors import ArgumentError, FormatError, UnsupportedFormatError

from conftest import rms, sine


def write_pcm16(path, data, rate):
    dsp.write_wav(path, dsp.AudioClip(np.asarray(data, dtype=np.float64), rate))


# ---------------------------------------------------------------- load_wav / write_wav


def test_load_mono_header_passthrough(tmp_path):
    p = tmp_path / "a.wav"
    write_pcm16(p, np.zeros(44100), 44100)
    clip = dsp.load_wav(p)
    assert clip.sample_rate_hz == 44100
    assert clip.n_frames == 44100 and clip.n_channels == 1


def test_load_scaling_by_32768(tmp_path):
    p = tmp_path / "a.wav"
    with wave.open(str(p), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(16000)
        wf.writeframes(np.array([32767, -32768, 0], dtype="<i2").tobytes())
    x = dsp.load_wav(p).samples
    assert x[0] == 32767 / 32768
    assert x[1] == -1.0 and x[2] == 0.0


def test_stereo_preserved_until_to_mono(tmp_path):
    p = tmp_path / "st.wav"
    data = np.column_stack([np.full(1000, 0.5), np.full(1000, -0.5)])
    write_pcm16(p, data, 16000)
    clip = dsp.load_wav(p)
    assert clip.n_channels == 2
    np.testing.assert_array_equal(clip.samples[:, 0], 0.5)
    np.testing.assert_array_equal(dsp.to_mono(clip).samples, 0.0)


def test_float_wav_rejected_by_name(tmp_path):
    p = tmp_path / "f.wav"
    data = np.zeros(100, dtype="<f4").tobytes()
    fmt = struct.pack("<HHIIHH", 3, 1, 16000, 64000, 4, 32)
    body = b"WAVE" + b"fmt " + struct.pack("<I", 16) + fmt + b"data" + struct.pack("<I", len(data)) + data
    p.write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
    with pytest.raises(UnsupportedFormatError, match="float"):
        dsp.load_wav(p)


def test_24bit_wav_rejected_by_name(tmp_path):
    p = tmp_path / "p24.wav"
    with wave.open(str(p), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(3)
        wf.setframerate(16000)
        wf.writeframes(b"\0" * 300)
    with pytest.raises(UnsupportedFormatError, match="24-bit"):
        dsp.load_wav(p)


def test_malformed_header(tmp_path):
    p = tmp_path / "bad.wav"
    p.write_bytes(b"RIFX0000WAVEjunk")
    with pytest.raises(FormatError):
        dsp.load_wav(p)
    p.write_bytes(b"RIFF\x10\0\0\0WAVEdata\0\0\0\0")
    with pytest.raises(FormatError, match="fmt"):
        dsp.load_wav(p)


# ---------------------------------------------------------------- to_mono


def test_to_mono_identical_channels_and_mono_passthrough():
    x = np.random.default_rng(0).uniform(-1, 1, 500)
    st_clip = dsp.AudioClip(np.column_stack([x, x]), 16000)
    np.testing.assert_array_equal(dsp.to_mono(st_clip).samples, x)
    mono = dsp.AudioClip(x, 16000)
    assert dsp.to_mono(mono) is mono


def test_to_mono_power_bound():
    rng = np.random.default_rng(1)
    l, r = rng.standard_normal(20000), rng.standard_normal(20000)
    m = dsp.to_mono(dsp.AudioClip(np.column_stack([l, r]), 16000)).samples
    assert np.mean(m**2) <= max(np.mean(l**2), np.mean(r**2))


def test_to_mono_rejects_many_channels():
    with pytest.raises(UnsupportedFormatError):
        dsp.to_mono(dsp.AudioClip(np.zeros((10, 3)), 16000))


# ---------------------------------------------------------------- resample


def zero_crossing_frequency(x, rate):
    s = np.signbit(x)
    crossings = np.flatnonzero(s[1:] != s[:-1])
    # first-to-last crossing spans (count - 1) half periods
    span = (crossings[-1] - crossings[0]) / rate
    return (crossings.size - 1) / (2 * span)


def test_resample_length_ratio():
    clip = dsp.AudioClip(np.zeros(44100), 44100)
    out = dsp.resample(clip, 16000)
    assert out.n_frames == 16000 and out.sample_rate_hz == 16000


@pytest.mark.parametrize("n,src,dst", [(100, 44100, 16000), (441, 44100, 16000), (7, 3, 2), (5, 2, 1), (1001, 48000, 16000)])
def test_resample_length_round_half_up(n, src, dst):
    exact = n * dst / src
    expected = int(np.floor(exact + 0.5))
    assert dsp.resampled_length(n, src, dst) == expected
    assert dsp.resample(dsp.AudioClip(np.zeros(n), src), dst).n_frames == expected


def test_resample_440_frequency_preserved():
    x = sine(440, 44100, seconds=1.0)
    y = dsp.resample(dsp.AudioClip(x, 44100), 16000).samples
    f = zero_crossing_frequency(y[200:-200], 16000)
    assert abs(f - 440) / 440 < 1e-3


def test_resample_10khz_rejected():
    # An abruptly gated tone carries in-band energy of its own (about -45 dB
    # even through an ideal brickwall), so the tone gets 10 ms raised-cosine fades.
    x = sine(10000, 44100, seconds=1.0)
    ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(441) / 441)
    x[:441] *= ramp
    x[-441:] *= ramp[::-1]
    y = dsp.resample(dsp.AudioClip(x, 44100), 16000).samples
    assert rms(y) <= 1e-3 * rms(x)


def test_resample_10khz_gated_tone_steady_state():
    x = sine(10000, 44100, seconds=1.0)
    y = dsp.resample(dsp.AudioClip(x, 44100), 16000).samples
    assert rms(y[500:-500]) <= 1e-3 * rms(x)


@pytest.mark.parametrize("freq", [8500, 9000, 12000, 16000, 21000])
def test_resample_stopband_60db(freq):
    x = sine(freq, 44100, seconds=1.0)
    y = dsp.resample(dsp.AudioClip(x, 44100), 16000).samples
    # ignore filter edge transients
    assert 20 * np.log10(rms(y[500:-500]) / rms(x)) <= -60


@pytest.mark.parametrize("freq", [100, 1000, 3000, 5000, 6500, 7100])
def test_resample_passband_ripple(freq):
    x = sine(freq, 44100, seconds=1.0)
    y = dsp.resample(dsp.AudioClip(x, 44100), 16000).samples
    gain_db = 20 * np.log10(rms(y[500:-500]) / rms(x[1400:-1400]))
    assert abs(gain_db) <= 0.5


def test_resample_round_trip_rms():
    x = sine(440, 44100, seconds=1.0)
    down = dsp.resample(dsp.AudioClip(x, 44100), 16000)
    back = dsp.resample(down, 44100).samples
    assert back.size == x.size
    assert abs(rms(back[1000:-1000]) / rms(x) - 1) < 0.05


def test_resample_bad_target():
    with pytest.raises(ArgumentError):
        dsp.resample(dsp.AudioClip(np.zeros(10), 16000), 0)


def test_resample_kernel_is_immutable():
    dsp.resample(dsp.AudioClip(np.zeros(441), 44100), 16000)
    kernel = dsp._sinc_kernel(160, 441, 44100, 16000)
    with pytest.raises(ValueError):
        kernel[0] = 1.0


# ---------------------------------------------------------------- peak_normalize


def test_peak_normalize_examples():
    out = dsp.peak_normalize(dsp.AudioClip(np.array([0.25, -0.5]), 16000)).samples
    np.testing.assert_array_equal(out, [0.5, -1.0])
    zeros = dsp.AudioClip(np.zeros(5), 16000)
    np.testing.assert_array_equal(dsp.peak_normalize(zeros).samples, 0.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=1, max_size=200))
def test_peak_normalize_unit_peak_and_idempotent(values):
    x = np.array(values)
    once = dsp.peak_normalize(dsp.AudioClip(x, 16000))
    twice = dsp.peak_normalize(once)
    assert np.max(np.abs(twice.samples - once.samples)) <= 1e-12
    if np.any(x != 0):
        assert abs(np.max(np.abs(once.samples)) - 1.0) <= 1e-6


# ---------------------------------------------------------------- segment_and_vad


def test_segment_count_drops_remainder(voiced_clip):
    x = np.resize(voiced_clip.samples, int(3.7 * 16000))
    segs = dsp.segment_and_vad(dsp.AudioClip(x, 16000, utterance_id="u"))
    assert len(segs) == 3
    assert all(s.samples.size == 16000 for s in segs)
    assert [s.segment_index for s in segs] == [0, 1, 2]


def test_short_clip_gives_no_segments():
    assert dsp.segment_and_vad(dsp.AudioClip(np.ones(15999), 16000)) == []


def test_silence_is_not_speech(voiced_clip):
    x = np.concatenate([voiced_clip.samples[:32000], np.zeros(16000)])
    segs = dsp.segment_and_vad(dsp.AudioClip(x, 16000, utterance_id="u"))
    assert [s.is_speech for s in segs] == [True, True, False]


def test_voiced_signal_is_speech(voiced_clip):
    segs = dsp.segment_and_vad(voiced_clip)
    assert segs and all(s.is_speech for s in segs)
    # oracle: frame statistics clear the thresholds used by the decision
    x = segs[0].samples
    assert rms(x) >= 1e-4
    frames = np.lib.stride_tricks.sliding_window_view(x, 400)[::160]
    e = np.mean(frames**2, axis=1)
    assert np.mean(e >= 0.05 * np.percentile(e, 90)) >= 0.25


def test_all_silent_utterance():
    segs = dsp.segment_and_vad(dsp.AudioClip(np.zeros(32000), 16000))
    assert len(segs) == 2 and not any(s.is_speech for s in segs)


def test_vad_rejects_stereo():
    with pytest.raises(ArgumentError):
        dsp.segment_and_vad(dsp.AudioClip(np.zeros((16000, 2)), 16000))


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=0, max_value=6 * 16000 + 15999))
def test_segment_count_property(n):
    x = np.random.default_rng(n).uniform(-1, 1, n)
    segs = dsp.segment_and_vad(dsp.AudioClip(x, 16000))
    assert len(segs) == n // 16000


def test_vad_deterministic(voiced_clip):
    a = [s.is_speech for s in dsp.segment_and_vad(voiced_clip)]
    b = [s.is_speech for s in dsp.segment_and_vad(voiced_clip)]
    assert a == b


def test_group_key_format():
    seg = dsp.Segment(np.zeros(16000), "utt", 3, True)
    assert seg.group_key == "utt#00003"


def test_canonicalize_chain(tmp_path):
    data = np.column_stack([sine(300, 44100, 2.0, 0.3), sine(300, 44100, 2.0, 0.1)])
    p = tmp_path / "s.wav"
    write_pcm16(p, data, 44100)
    clip = dsp.canonicalize(dsp.load_wav(p))
    assert clip.sample_rate_hz == 16000 and clip.samples.ndim == 1
    assert clip.n_frames == 32000
    assert abs(np.max(np.abs(clip.samples)) - 1.0) < 1e-12
