"""
Classical intrusive speech-enhancement measures.

fwsnrseg: frequency-weighted segmental SNR over critical bands.
dllr: log-likelihood ratio distance between LPC models.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.fft import rfft
from scipy.linalg import toeplitz

from audio_signal import (AudioSignal, Frame, WindowKind, analysis_window, channel_mean,
                          check_compatible, frame_matrix, frame_stream, ms_to_samples,
                          require_mono_or_stereo, resample)

logger = logging.getLogger(__name__)

# Critical band table of the common speech-enhancement evaluation code
# (centre frequency and bandwidth in Hz).
SPEECH_BAND_CENTERS = (50.0000, 120.000, 190.000, 260.000, 330.000, 400.000, 470.000,
                       540.000, 617.372, 703.378, 798.717, 904.128, 1020.38, 1148.30,
                       1288.72, 1442.54, 1610.70, 1794.16, 1993.93, 2211.08, 2446.71,
                       2701.97, 2978.04, 3276.17, 3597.63)
SPEECH_BAND_WIDTHS = (70.0000, 70.0000, 70.0000, 70.0000, 70.0000, 70.0000, 70.0000,
                      77.3724, 86.0056, 95.3398, 105.411, 116.256, 127.914, 140.423,
                      153.823, 168.154, 183.457, 199.776, 217.153, 235.631, 255.255,
                      276.072, 298.126, 321.465, 346.136)

BARK_MAX_FREQ = 20000.0


class DegenerateFrameError(ValueError):
    """LPC analysis is undefined for this frame (zero or non-positive-definite autocorrelation)."""


@dataclass(frozen=True)
class FwSnrSegParams:
    frame_ms: float = 30.0
    hop_ms: float = 7.5
    band_count: int = 25
    snr_clamp: Tuple[float, float] = (-10.0, 35.0)
    weight_exponent: float = 0.2
    silence_gate_db: float = -60.0
    band_layout: str = 'speech'
    band_edges: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        lo, hi = self.snr_clamp
        if not lo < hi:
            raise ValueError(f"snr_clamp needs lo < hi, got {self.snr_clamp}")
        if not 0 < self.weight_exponent <= 1:
            raise ValueError(f"weight_exponent must be in (0, 1], got {self.weight_exponent}")
        if self.hop_ms <= 0 or self.frame_ms < self.hop_ms:
            raise ValueError(f"Need frame_ms >= hop_ms > 0, got {self.frame_ms}/{self.hop_ms}")
        if self.band_layout not in ('speech', 'bark'):
            raise ValueError(f"Unknown band layout: {self.band_layout}")
        if self.band_layout == 'speech' and self.band_edges is None and self.band_count != 25:
            raise ValueError("The speech band layout has exactly 25 bands; use band_layout='bark'")
        if self.band_count < 1:
            raise ValueError(f"band_count must be >= 1, got {self.band_count}")

    def edges_for(self, sample_rate: int) -> np.ndarray:
        if self.band_edges is not None:
            edges = np.asarray(self.band_edges, dtype=float)
        elif self.band_layout == 'bark':
            edges = bark_band_edges(self.band_count, min(sample_rate / 2.0, BARK_MAX_FREQ))
        else:
            edges = speech_band_edges()
        if edges.ndim != 1 or len(edges) < 2 or np.any(np.diff(edges) <= 0) or edges[0] < 0:
            raise ValueError("Band edges must be non-negative and strictly increasing")
        if edges[-1] > sample_rate / 2.0:
            raise ValueError(f"Top band edge {edges[-1]:.1f} Hz exceeds Nyquist at {sample_rate} Hz")
        return edges


@dataclass(frozen=True)
class DllrParams:
    frame_ms: float = 30.0
    hop_ms: float = 7.5
    lpc_order: int = 16
    per_frame_cap: float = field(default=2.0)
    internal_rate: int = 16000

    def __post_init__(self):
        if self.lpc_order < 2:
            raise ValueError(f"lpc_order must be >= 2, got {self.lpc_order}")
        if self.per_frame_cap != 2.0:
            raise ValueError("The per-frame LLR cap is fixed at 2.0")
        if self.hop_ms <= 0 or self.frame_ms < self.hop_ms:
            raise ValueError(f"Need frame_ms >= hop_ms > 0, got {self.frame_ms}/{self.hop_ms}")
        if self.internal_rate <= 0:
            raise ValueError(f"internal_rate must be positive, got {self.internal_rate}")


def speech_band_edges() -> np.ndarray:
    """Contiguous edges for the 25-band speech table (midpoints between centres)."""
    centers = np.asarray(SPEECH_BAND_CENTERS)
    widths = np.asarray(SPEECH_BAND_WIDTHS)
    edges = np.empty(len(centers) + 1)
    edges[0] = centers[0] - widths[0] / 2.0
    edges[1:-1] = (centers[:-1] + centers[1:]) / 2.0
    edges[-1] = centers[-1] + widths[-1] / 2.0
    return edges


def hz_to_bark(freq):
    return 26.81 * np.asarray(freq, dtype=float) / (1960.0 + np.asarray(freq, dtype=float)) - 0.53


def bark_to_hz(bark):
    bark = np.asarray(bark, dtype=float)
    return 1960.0 * (bark + 0.53) / (26.28 - bark)


def bark_band_edges(band_count: int, max_freq: float) -> np.ndarray:
    """band_count bands equally spaced on the Bark scale between 0 Hz and max_freq."""
    z = np.linspace(hz_to_bark(0.0), hz_to_bark(max_freq), band_count + 1)
    edges = bark_to_hz(z)
    edges[0], edges[-1] = 0.0, max_freq
    return edges


def critical_band_energies(frame_spectrum: np.ndarray, band_edges: Sequence[float],
                           bin_freqs: np.ndarray) -> np.ndarray:
    """
    Band magnitudes from a magnitude spectrum.

    A bin belongs to band j when edges[j] <= f < edges[j+1]; the band magnitude is
    the root of the summed bin power. Accepts one spectrum or a (frames, bins) stack.
    """
    spectrum = np.asarray(frame_spectrum, dtype=float)
    edges = np.asarray(band_edges, dtype=float)
    n_bands = len(edges) - 1
    band_index = np.searchsorted(edges, np.asarray(bin_freqs, dtype=float), side='right') - 1
    membership = (band_index[np.newaxis, :] == np.arange(n_bands)[:, np.newaxis]).astype(float)
    return np.sqrt((spectrum ** 2) @ membership.T)


def _fwsnrseg_frames(reference: np.ndarray, test: np.ndarray, sample_rate: int,
                     params: FwSnrSegParams, edges: np.ndarray) -> np.ndarray:
    """Scores of the non-gated frames of one channel."""
    frame_len = ms_to_samples(params.frame_ms, sample_rate)
    hop = ms_to_samples(params.hop_ms, sample_rate)
    ref_frames = frame_matrix(reference, frame_len, hop)
    test_frames = frame_matrix(test, frame_len, hop)
    if len(ref_frames) == 0:
        return np.empty(0)

    window = analysis_window(WindowKind.HANN, frame_len)
    n_fft = 2 ** int(math.ceil(math.log2(2 * frame_len)))
    bin_freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    b_ref = critical_band_energies(np.abs(rfft(ref_frames * window, n_fft, axis=1)), edges, bin_freqs)
    b_test = critical_band_energies(np.abs(rfft(test_frames * window, n_fft, axis=1)), edges, bin_freqs)

    lo, hi = params.snr_clamp
    diff = b_ref - b_test
    with np.errstate(divide='ignore', invalid='ignore'):
        level_db = 10.0 * np.log10(np.mean(ref_frames ** 2, axis=1))
        snr = 10.0 * np.log10(b_ref ** 2 / diff ** 2)
    # zero difference is a perfect band
    snr = np.clip(np.where(diff == 0, hi, snr), lo, hi)

    weights = b_ref ** params.weight_exponent
    weight_sum = np.sum(weights, axis=1)
    active = (level_db >= params.silence_gate_db) & (weight_sum > 0)
    return np.sum(weights * snr, axis=1)[active] / weight_sum[active]


def fwsnrseg(reference: AudioSignal, test: AudioSignal,
             params: FwSnrSegParams = FwSnrSegParams()) -> float:
    """
    Frequency-weighted segmental SNR in dB.

    Per frame and band, SNR = 10 log10(B_ref^2 / (B_ref - B_test)^2) clamped to
    snr_clamp, weighted by B_ref ** weight_exponent. Frames whose reference level is
    below silence_gate_db are skipped. Stereo: per-channel scores, then channel_mean.
    """
    check_compatible(reference, test, 'reference and test')
    require_mono_or_stereo(reference, 'fwSNRseg')
    edges = params.edges_for(reference.sample_rate)

    channel_scores = []
    for ch in range(reference.channel_count):
        scores = _fwsnrseg_frames(reference.channel(ch), test.channel(ch),
                                  reference.sample_rate, params, edges)
        if len(scores) == 0:
            logger.warning(f"fwSNRseg: channel {ch} has no frames above the silence gate")
            continue
        channel_scores.append(float(np.mean(scores)))

    if not channel_scores:
        raise ValueError("fwSNRseg: no frames survive the silence gate")
    lo, hi = params.snr_clamp
    return float(np.clip(channel_mean(channel_scores), lo, hi))


def autocorrelation(frame: np.ndarray, order: int) -> np.ndarray:
    """Autocorrelation lags r[0..order] of a (windowed) frame."""
    x = np.asarray(frame, dtype=float)
    n = len(x)
    return np.array([np.dot(x[:n - k], x[k:]) for k in range(order + 1)])


def levinson_durbin(r: np.ndarray, order: int) -> Tuple[np.ndarray, float]:
    """
    Solve the autocorrelation normal equations.

    Returns (a, err) with a[0] = 1, A(z) = sum a[k] z^-k and err the prediction
    residual energy.
    """
    if r[0] <= 0:
        raise DegenerateFrameError("Zero-energy frame")
    a = np.zeros(order + 1)
    a[0] = 1.0
    err = float(r[0])
    for i in range(1, order + 1):
        acc = r[i] + np.dot(a[1:i], r[i - 1:0:-1])
        k = -acc / err
        previous = a.copy()
        a[1:i] = previous[1:i] + k * previous[i - 1:0:-1]
        a[i] = k
        err *= (1.0 - k * k)
        if err <= 0:
            raise DegenerateFrameError(f"Autocorrelation not positive definite at order {i}")
    return a, err


def lpc(frame: np.ndarray, order: int) -> Tuple[np.ndarray, float]:
    """Autocorrelation-method LPC; returns (a[0..p] with a[0] = 1, residual energy)."""
    if len(frame) <= order:
        raise ValueError(f"Frame of {len(frame)} samples is too short for LPC order {order}")
    return levinson_durbin(autocorrelation(frame, order), order)


def llr_frame_distance(a_ref: np.ndarray, a_test: np.ndarray, r_ref: np.ndarray) -> float:
    """ln of the residual energies of both predictors applied to the reference statistics."""
    r_matrix = toeplitz(r_ref)
    numerator = a_test @ r_matrix @ a_test
    denominator = a_ref @ r_matrix @ a_ref
    return math.log(numerator / denominator)


def aggregate_llr_frames(values: Sequence[float], cap: float = 2.0) -> float:
    """Floor each frame distance at 0, cap it, then average over time."""
    values = np.asarray(values, dtype=float)
    if len(values) == 0:
        raise ValueError("No valid LLR frames")
    return float(np.mean(np.clip(values, 0.0, cap)))


def _llr_frame_values(ref_frames: Sequence[Frame], test_frames: Sequence[Frame],
                      params: DllrParams) -> List[float]:
    """
    Per-frame distances of one channel. A silent reference frame has no defined
    ratio and is skipped; an active reference against a silent test frame scores the cap.
    """
    values = []
    skipped = 0
    for ref_frame, test_frame in zip(ref_frames, test_frames):
        r_ref = autocorrelation(ref_frame.samples, params.lpc_order)
        try:
            a_ref, _ = levinson_durbin(r_ref, params.lpc_order)
        except DegenerateFrameError:
            skipped += 1
            continue
        try:
            a_test, _ = lpc(test_frame.samples, params.lpc_order)
        except DegenerateFrameError:
            values.append(params.per_frame_cap)
            continue
        values.append(llr_frame_distance(a_ref, a_test, r_ref))
    if skipped:
        logger.debug(f"dLLR: skipped {skipped} silent reference frames")
    return values


def dllr(reference: AudioSignal, test: AudioSignal, params: DllrParams = DllrParams()) -> float:
    """
    Log-likelihood ratio distance in [0, 2].

    Both signals are resampled to params.internal_rate. Per-frame distances are
    floored at 0 and capped at 2 before averaging; stereo uses channel_mean.
    """
    check_compatible(reference, test, 'reference and test')
    require_mono_or_stereo(reference, 'dLLR')
    reference = resample(reference, params.internal_rate)
    test = resample(test, params.internal_rate)

    ref_frames = frame_stream(reference, params.frame_ms, params.hop_ms, WindowKind.HANN)
    test_frames = frame_stream(test, params.frame_ms, params.hop_ms, WindowKind.HANN)

    channel_scores = []
    for ch in range(reference.channel_count):
        values = _llr_frame_values(ref_frames[ch], test_frames[ch], params)
        if not values:
            logger.warning(f"dLLR: channel {ch} has no active reference frames")
            continue
        channel_scores.append(aggregate_llr_frames(values, params.per_frame_cap))

    if not channel_scores:
        raise ValueError("dLLR: the reference has no active frames")
    return channel_mean(channel_scores)
