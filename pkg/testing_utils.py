"""
Shared helpers for the test scripts: signal generators, temp files and the
PASS/FAIL runner used when a test module is executed directly.
"""

import sys
import textwrap
from pathlib import Path
from typing import Callable, List, Sequence, Tuple

import numpy as np
import soundfile as sf
from scipy.signal import lfilter

from audio_signal import AudioSignal


def sine(freq: float, sample_rate: int, duration: float, amplitude: float = 0.5) -> np.ndarray:
    t = np.arange(int(round(sample_rate * duration))) / sample_rate
    return amplitude * np.sin(2 * np.pi * freq * t)


def ar_process(rng: np.random.Generator, denominator: Sequence[float], length: int,
               scale: float = 0.1) -> np.ndarray:
    """All-pole process 1 / A(z) driven by white noise."""
    return scale * lfilter([1.0], denominator, rng.standard_normal(length))


def speech_like(rng: np.random.Generator, length: int, sample_rate: int = 16000) -> np.ndarray:
    """Resonant noise with a syllable-rate envelope, never silent."""
    x = ar_process(rng, [1.0, -1.6, 0.9], length)
    envelope = 0.6 + 0.4 * np.sin(2 * np.pi * 4.0 * np.arange(length) / sample_rate)
    x = x * envelope
    return 0.5 * x / np.max(np.abs(x))


def signal(samples, sample_rate: int = 16000) -> AudioSignal:
    return AudioSignal(np.asarray(samples, dtype=float), sample_rate)


def write_wav(directory, name: str, samples, sample_rate: int = 16000,
              subtype: str = 'FLOAT') -> str:
    """Write (channels, n) or 1-D samples as WAV and return the path."""
    path = Path(directory) / name
    data = np.asarray(samples)
    if data.ndim == 2:
        data = data.T
    sf.write(str(path), data, sample_rate, subtype=subtype, format='WAV')
    return str(path)


def write_script(directory, name: str, body: str) -> str:
    """Write a Python mock tool; run it with sys.executable."""
    path = Path(directory) / name
    path.write_text(textwrap.dedent(body), encoding='utf-8')
    return str(path)


def mock_tool_command(script: str) -> Tuple[str, List[str]]:
    return sys.executable, [script, '{ref}', '{test}']


def run_tests(title: str, tests: Sequence[Tuple[str, Callable[[], None]]]) -> int:
    """Run test functions, print a summary and return the exit status."""
    print("=" * 60)
    print(title)
    print("=" * 60)

    results = []
    for test_name, test_func in tests:
        try:
            test_func()
            print(f"✓ {test_name}")
            results.append((test_name, True))
        except Exception as e:
            print(f"✗ {test_name}: {type(e).__name__}: {e}")
            results.append((test_name, False))

    print("\n" + "=" * 60)
    print("TEST SUMMARY")
    print("=" * 60)

    passed = sum(1 for _, result in results if result)
    total = len(results)
    for test_name, result in results:
        status = "✓ PASS" if result else "✗ FAIL"
        print(f"{status}: {test_name}")

    print(f"\nTotal: {passed}/{total} tests passed")
    if passed == total:
        print("\n✓ All tests passed!")
        return 0
    print(f"\n✗ {total - passed} test(s) failed")
    return 1
