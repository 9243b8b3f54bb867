#!/usr/bin/env python3
"""
Tests for WAV I/O, resampling, framing and the stereo policy.
"""

import math
import sys
import tempfile

import numpy as np
import soundfile as sf

from audio_signal import (AudioSignal, WindowKind, analysis_window, channel_mean,
                          frame_count, frame_matrix, frame_stream, load_wav, resample,
                          save_wav)
from testing_utils import run_tests, sine, write_wav


def _tone_amplitude(x: np.ndarray, freq: float, sample_rate: int) -> float:
    """Least-squares amplitude of a sinusoid at a known frequency."""
    t = np.arange(len(x)) / sample_rate
    basis = np.column_stack([np.sin(2 * np.pi * freq * t), np.cos(2 * np.pi * freq * t)])
    coeffs, *_ = np.linalg.lstsq(basis, x, rcond=None)
    return float(np.hypot(*coeffs))


def test_pcm16_full_scale():
    """0x7FFF loads as 32767/32768"""
    print("\nTesting PCM 16-bit scaling...")
    with tempfile.TemporaryDirectory() as tmp:
        path = f"{tmp}/max.wav"
        sf.write(path, np.array([32767, -32768, 0], dtype=np.int16), 48000, subtype='PCM_16')
        sig = load_wav(path)
    assert sig.sample_rate == 48000
    assert sig.channel(0)[0] == 32767 / 32768
    assert sig.channel(0)[1] == -1.0
    print("✓ 16-bit samples normalized to full scale")


def test_stereo_layout():
    print("\nTesting stereo layout...")
    data = np.zeros((2, 480))
    data[0, :] = 0.25
    data[1, :] = -0.5
    with tempfile.TemporaryDirectory() as tmp:
        sig = load_wav(write_wav(tmp, 'stereo.wav', data, 48000))
    assert sig.channel_count == 2
    assert sig.length == 480
    assert np.all(sig.channel(0) == 0.25) and np.all(sig.channel(1) == -0.5)
    print("✓ Channels load as rows")


def test_float_round_trip():
    """Float32 buffers survive save then load bit-exactly"""
    print("\nTesting float WAV round trip...")
    rng = np.random.default_rng(1)
    with tempfile.TemporaryDirectory() as tmp:
        for i in range(100):
            channels = 1 + i % 2
            data = rng.uniform(-1, 1, (channels, 64 + i)).astype(np.float32).astype(np.float64)
            original = AudioSignal(data, 44100)
            save_wav(original, f"{tmp}/rt.wav")
            loaded = load_wav(f"{tmp}/rt.wav")
            assert loaded.sample_rate == 44100
            assert np.array_equal(loaded.samples, original.samples)
    print("✓ 100 buffers round-trip exactly")


def test_load_errors():
    print("\nTesting load errors...")
    with tempfile.TemporaryDirectory() as tmp:
        try:
            load_wav(f"{tmp}/missing.wav")
            raise AssertionError("missing file accepted")
        except FileNotFoundError:
            pass

        with open(f"{tmp}/garbage.wav", 'wb') as f:
            f.write(b'this is not audio at all')
        try:
            load_wav(f"{tmp}/garbage.wav")
            raise AssertionError("garbage accepted")
        except ValueError:
            pass

        sf.write(f"{tmp}/u8.wav", np.zeros(16), 8000, subtype='PCM_U8')
        try:
            load_wav(f"{tmp}/u8.wav")
            raise AssertionError("8-bit codec accepted")
        except ValueError as e:
            assert 'PCM_U8' in str(e)

        sf.write(f"{tmp}/empty.wav", np.zeros(0), 8000, subtype='PCM_16')
        try:
            load_wav(f"{tmp}/empty.wav")
            raise AssertionError("empty file accepted")
        except ValueError:
            pass
    print("✓ Missing, unreadable, unsupported and empty files rejected")


def test_signal_validation():
    print("\nTesting AudioSignal validation...")
    for bad_rate in (0, -8000, 44100.5):
        try:
            AudioSignal(np.zeros(4), bad_rate)
            raise AssertionError(f"rate {bad_rate} accepted")
        except ValueError:
            pass
    sig = AudioSignal(np.zeros(4), 8000)
    assert not sig.samples.flags.writeable
    a = AudioSignal(np.ones(4), 8000)
    try:
        a + AudioSignal(np.ones(5), 8000)
        raise AssertionError("length mismatch accepted")
    except ValueError:
        pass
    assert (a - a).energy() == 0.0
    print("✓ Invalid rates and mismatched arithmetic rejected")


def test_resample_identity_and_length():
    print("\nTesting resample length...")
    sig = AudioSignal(np.zeros(480), 48000)
    assert resample(sig, 48000) is sig
    assert resample(sig, 16000).length == 160
    assert resample(AudioSignal(np.zeros(441), 44100), 48000).length == 480
    assert resample(AudioSignal(np.zeros((2, 1000)), 48000), 16000).channel_count == 2
    print("✓ Output length is round(n * target / source)")


def test_resample_preserves_tone():
    """A 1 kHz tone keeps its amplitude within 0.1 dB across 48k -> 16k"""
    print("\nTesting resampled tone amplitude...")
    tone = AudioSignal(sine(1000.0, 48000, 1.0, 0.5), 48000)
    down = resample(tone, 16000)
    core = down.channel(0)[1600:-1600]
    amplitude = _tone_amplitude(core, 1000.0, 16000)
    assert abs(20 * math.log10(amplitude / 0.5)) < 0.1, amplitude
    print(f"✓ Amplitude {amplitude:.6f}")


def test_resample_round_trip_rms():
    print("\nTesting resample round trip...")
    tone = AudioSignal(sine(1000.0, 48000, 1.0, 0.5), 48000)
    back = resample(resample(tone, 16000), 48000)
    core = slice(4800, -4800)
    rms_in = np.sqrt(np.mean(tone.channel(0)[core] ** 2))
    rms_out = np.sqrt(np.mean(back.channel(0)[core] ** 2))
    assert abs(20 * math.log10(rms_out / rms_in)) < 0.2
    print("✓ RMS preserved within 0.2 dB")


def test_frame_counts():
    print("\nTesting frame counts...")
    one = frame_stream(AudioSignal(np.ones(480), 48000), 10.0, 10.0, WindowKind.RECTANGULAR)
    assert len(one) == 1 and len(one[0]) == 1
    assert np.array_equal(one[0][0].samples, np.ones(480))

    second = frame_stream(AudioSignal(np.zeros(48000), 48000), 30.0, 7.5)
    assert len(second[0]) == 130
    assert second[0][1].start_index == 360

    rng = np.random.default_rng(5)
    for _ in range(50):
        length = int(rng.integers(1, 3000))
        frame_len = int(rng.integers(1, 500))
        hop = int(rng.integers(1, frame_len + 1))
        expected = 0 if frame_len > length else (length - frame_len) // hop + 1
        assert frame_count(length, frame_len, hop) == expected
        assert frame_matrix(np.arange(length, dtype=float), frame_len, hop).shape == (expected, frame_len)

    empty = frame_stream(AudioSignal(np.zeros(100), 48000), 30.0, 7.5)
    assert empty == [[]]
    print("✓ Frame counts follow floor((n - frame) / hop) + 1")


def test_frame_errors():
    print("\nTesting frame parameter errors...")
    sig = AudioSignal(np.zeros(1000), 16000)
    for frame_ms, hop_ms in ((5.0, 10.0), (10.0, 0.0), (0.01, 0.01)):
        try:
            frame_stream(sig, frame_ms, hop_ms)
            raise AssertionError(f"frame {frame_ms}/{hop_ms} accepted")
        except ValueError:
            pass
    print("✓ Bad frame/hop combinations rejected")


def test_hann_window_sum():
    print("\nTesting Hann window...")
    for n in (3, 240, 480, 1441):
        w = analysis_window(WindowKind.HANN, n)
        assert abs(np.sum(w) - (n - 1) / 2.0) < 1e-9
        assert w[0] == 0.0 and abs(w[-1]) < 1e-15
    assert np.array_equal(analysis_window('rectangular', 7), np.ones(7))
    print("✓ Symmetric Hann sums to (N-1)/2")


def test_channel_mean():
    print("\nTesting channel mean...")
    assert channel_mean([5.0]) == 5.0
    assert channel_mean([10.0, 20.0]) == 15.0
    rng = np.random.default_rng(2)
    values = list(rng.normal(size=8))
    assert channel_mean(values) == math.fsum(values) / 8
    try:
        channel_mean([])
        raise AssertionError("empty input accepted")
    except ValueError:
        pass
    print("✓ Arithmetic mean over channels")


def run_all_tests():
    tests = [
        ("PCM 16 scaling", test_pcm16_full_scale),
        ("Stereo layout", test_stereo_layout),
        ("Float round trip", test_float_round_trip),
        ("Load errors", test_load_errors),
        ("Signal validation", test_signal_validation),
        ("Resample length", test_resample_identity_and_length),
        ("Resample tone amplitude", test_resample_preserves_tone),
        ("Resample round trip", test_resample_round_trip_rms),
        ("Frame counts", test_frame_counts),
        ("Frame errors", test_frame_errors),
        ("Hann window", test_hann_window_sum),
        ("Channel mean", test_channel_mean),
    ]
    return run_tests("AUDIO SIGNAL TEST SUITE", tests)


if __name__ == '__main__':
    sys.exit(run_all_tests())
