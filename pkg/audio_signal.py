"""
Audio signal container and the signal primitives shared by every measure.
Handles WAV I/O, band-limited resampling, framing and the stereo policy.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import List, Sequence, Union

import numpy as np
import soundfile as sf
from scipy import signal as sps

logger = logging.getLogger(__name__)

SUPPORTED_SUBTYPES = ('PCM_16', 'PCM_24', 'PCM_32', 'FLOAT')
MAX_CHANNELS = 8

# Windowed-sinc resampler
RESAMPLER_TAPS_PER_PHASE = 64
RESAMPLER_KAISER_BETA = 8.6


class WindowKind(str, Enum):
    RECTANGULAR = 'rectangular'
    HANN = 'hann'


@dataclass(frozen=True)
class AudioSignal:
    """
    Multichannel waveform, stored as a read-only (channels, length) float64 array.

    Amplitudes are full-scale normalized, so a 16-bit PCM sample of 0x7FFF
    loads as 32767/32768.
    """
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.array(self.samples, dtype=np.float64)
        if samples.ndim == 1:
            samples = samples[np.newaxis, :]
        if samples.ndim != 2 or samples.shape[0] < 1:
            raise ValueError(f"Samples must be shaped (channels, length), got {samples.shape}")
        if int(self.sample_rate) != self.sample_rate or self.sample_rate <= 0:
            raise ValueError(f"Sample rate must be a positive integer, got {self.sample_rate}")
        samples.flags.writeable = False
        object.__setattr__(self, 'samples', samples)
        object.__setattr__(self, 'sample_rate', int(self.sample_rate))

    @property
    def channel_count(self) -> int:
        return self.samples.shape[0]

    @property
    def length(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.length / self.sample_rate

    def channel(self, index: int) -> np.ndarray:
        return self.samples[index]

    def flatten(self) -> np.ndarray:
        """All channels concatenated into one vector (channel-major)."""
        return self.samples.reshape(-1)

    def with_samples(self, samples: np.ndarray) -> 'AudioSignal':
        return AudioSignal(np.reshape(samples, (self.channel_count, -1)), self.sample_rate)

    def scaled(self, gain: float) -> 'AudioSignal':
        return AudioSignal(self.samples * gain, self.sample_rate)

    def energy(self) -> float:
        return float(np.sum(self.samples ** 2))

    def __add__(self, other: 'AudioSignal') -> 'AudioSignal':
        check_compatible(self, other)
        return AudioSignal(self.samples + other.samples, self.sample_rate)

    def __sub__(self, other: 'AudioSignal') -> 'AudioSignal':
        check_compatible(self, other)
        return AudioSignal(self.samples - other.samples, self.sample_rate)


@dataclass(frozen=True)
class Frame:
    """One windowed analysis block of a single channel."""
    samples: np.ndarray
    start_index: int
    window_kind: WindowKind


def check_compatible(a: AudioSignal, b: AudioSignal, what: str = 'signals'):
    """Raise ValueError unless both signals share rate, length and channel count."""
    if a.sample_rate != b.sample_rate:
        raise ValueError(f"Sample rate mismatch between {what}: {a.sample_rate} vs {b.sample_rate}")
    if a.length != b.length:
        raise ValueError(f"Length mismatch between {what}: {a.length} vs {b.length}")
    if a.channel_count != b.channel_count:
        raise ValueError(f"Channel count mismatch between {what}: "
                         f"{a.channel_count} vs {b.channel_count}")


def require_mono_or_stereo(signal: AudioSignal, measure: str):
    if signal.channel_count > 2:
        raise ValueError(f"{measure} defines only mono/stereo behavior, "
                         f"got {signal.channel_count} channels")


def load_wav(path: Union[str, Path]) -> AudioSignal:
    """
    Load a RIFF/WAVE file (PCM 16/24/32-bit or 32-bit float, 1-8 channels).

    Integer formats are scaled by 1/2^(bits-1); float data passes through.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"WAV file not found: {path}")

    try:
        info = sf.info(str(path))
    except RuntimeError as e:
        raise ValueError(f"Unreadable WAV file {path}: {e}") from e

    if info.format not in ('WAV', 'WAVEX'):
        raise ValueError(f"Not a RIFF/WAVE file: {path} (format {info.format})")
    if info.subtype not in SUPPORTED_SUBTYPES:
        raise ValueError(f"Unsupported codec {info.subtype} in {path}; "
                         f"expected one of {', '.join(SUPPORTED_SUBTYPES)}")
    if not 1 <= info.channels <= MAX_CHANNELS:
        raise ValueError(f"Unsupported channel count {info.channels} in {path}")

    data, sample_rate = sf.read(str(path), dtype='float64', always_2d=True)
    if data.shape[0] == 0:
        raise ValueError(f"WAV file has no sample data: {path}")

    logger.debug(f"Loaded {path}: {info.channels} ch, {sample_rate} Hz, {data.shape[0]} samples")
    return AudioSignal(data.T, sample_rate)


def save_wav(signal: AudioSignal, path: Union[str, Path], subtype: str = 'FLOAT'):
    """Write a signal as WAV; 32-bit float by default."""
    if subtype not in SUPPORTED_SUBTYPES:
        raise ValueError(f"Unsupported output subtype: {subtype}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    sf.write(str(path), signal.samples.T, signal.sample_rate, subtype=subtype, format='WAV')


@lru_cache(maxsize=32)
def _resampling_filter(up: int, down: int) -> np.ndarray:
    max_rate = max(up, down)
    numtaps = RESAMPLER_TAPS_PER_PHASE * max_rate + 1
    taps = sps.firwin(numtaps, 1.0 / max_rate, window=('kaiser', RESAMPLER_KAISER_BETA))
    taps.flags.writeable = False
    return taps


def resample(signal: AudioSignal, target_rate: int) -> AudioSignal:
    """
    Band-limited polyphase resampling with a Kaiser-windowed sinc.

    Output length is round(length * target / source); equal rates return the input.
    """
    if target_rate <= 0:
        raise ValueError(f"Target rate must be positive, got {target_rate}")
    target_rate = int(target_rate)
    if target_rate == signal.sample_rate:
        return signal

    g = math.gcd(target_rate, signal.sample_rate)
    up, down = target_rate // g, signal.sample_rate // g
    taps = np.array(_resampling_filter(up, down))
    out = sps.resample_poly(signal.samples, up, down, axis=1, window=taps)

    target_length = int(math.floor(signal.length * target_rate / signal.sample_rate + 0.5))
    if out.shape[1] >= target_length:
        out = out[:, :target_length]
    else:
        out = np.pad(out, ((0, 0), (0, target_length - out.shape[1])))
    return AudioSignal(out, target_rate)


def ms_to_samples(ms: float, sample_rate: int) -> int:
    return int(math.floor(ms * sample_rate / 1000.0 + 0.5))


def analysis_window(kind: WindowKind, length: int) -> np.ndarray:
    """Symmetric window; the Hann window sums to (N-1)/2."""
    kind = WindowKind(kind)
    if kind == WindowKind.HANN:
        return sps.windows.hann(length, sym=True)
    return np.ones(length)


def frame_count(length: int, frame_len: int, hop: int) -> int:
    if frame_len > length:
        return 0
    return (length - frame_len) // hop + 1


def frame_matrix(x: np.ndarray, frame_len: int, hop: int) -> np.ndarray:
    """Unwindowed frames of a 1-D array as a (frames, frame_len) view; trailing partial frame dropped."""
    n_frames = frame_count(len(x), frame_len, hop)
    if n_frames == 0:
        return np.empty((0, frame_len))
    return np.lib.stride_tricks.sliding_window_view(x, frame_len)[::hop][:n_frames]


def frame_stream(signal: AudioSignal, frame_ms: float, hop_ms: float,
                 window_kind: WindowKind = WindowKind.HANN) -> List[List[Frame]]:
    """Split each channel into windowed frames covering [0, length)."""
    if hop_ms <= 0 or frame_ms < hop_ms:
        raise ValueError(f"Need frame_ms >= hop_ms > 0, got frame_ms={frame_ms}, hop_ms={hop_ms}")
    frame_len = ms_to_samples(frame_ms, signal.sample_rate)
    hop = ms_to_samples(hop_ms, signal.sample_rate)
    if frame_len < 1 or hop < 1:
        raise ValueError(f"Frame of {frame_ms} ms / hop of {hop_ms} ms is shorter than one sample")
    window = analysis_window(window_kind, frame_len)

    frames = []
    for ch in range(signal.channel_count):
        blocks = frame_matrix(signal.channel(ch), frame_len, hop)
        frames.append([Frame(block * window, i * hop, WindowKind(window_kind))
                       for i, block in enumerate(blocks)])
    return frames


def channel_mean(per_channel_scores: Sequence[float]) -> float:
    """Stereo policy: arithmetic mean of the per-channel outputs."""
    scores = list(per_channel_scores)
    if not scores:
        raise ValueError("channel_mean needs at least one channel score")
    return math.fsum(scores) / len(scores)
