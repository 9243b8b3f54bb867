"""
Source-separation style decomposition of a signal under test.

The test signal y is split into an allowed target part, interference leakage and
an artifact residual, either by least-squares projection onto FIR-filtered
(delayed) references or by a single scale factor. The six energy ratios
SDR/SIR/SAR and SI-SDR/SI-SIR/SI-SAR are computed from the components.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence

import numpy as np
from scipy.fft import irfft, rfft
from scipy.linalg import LinAlgError, cho_factor, cho_solve, lstsq, toeplitz
from scipy.signal import fftconvolve

from audio_signal import AudioSignal, check_compatible

logger = logging.getLogger(__name__)

DEFAULT_FILTER_LEN = 512
DEFAULT_MAX_BASIS_DIM = 8192
RATIO_CLAMP_DB = 30.0
TIKHONOV_SCALE = 1e-10
REFINEMENT_STEPS = 2


class DecompositionMode(str, Enum):
    FULL_FIR = 'full_fir'
    SCALE_INVARIANT = 'scale_invariant'


@dataclass(frozen=True)
class Decomposition:
    """
    Components of a signal under test.

    s_target already contains the spatial error. In full_fir mode the components
    have the zero-padded length n + L - 1 and sum to y padded with L - 1 zeros;
    use trimmed(n) to get signals aligned with y.
    """
    s_target: AudioSignal
    e_interf: AudioSignal
    e_artif: AudioSignal
    mode: DecompositionMode
    filter_len: Optional[int] = None

    def reconstruction(self) -> AudioSignal:
        return self.s_target + self.e_interf + self.e_artif

    @property
    def sa_reference(self) -> AudioSignal:
        """Everything except the artifacts: s_target + e_interf."""
        return self.s_target + self.e_interf

    def trimmed(self, length: int) -> 'Decomposition':
        def cut(sig: AudioSignal) -> AudioSignal:
            return AudioSignal(sig.samples[:, :length], sig.sample_rate)
        return Decomposition(cut(self.s_target), cut(self.e_interf), cut(self.e_artif),
                             self.mode, self.filter_len)


@dataclass(frozen=True)
class BssRatios:
    sdr: float
    sir: float
    sar: float

    def to_dict(self) -> dict:
        return {'sdr': self.sdr, 'sir': self.sir, 'sar': self.sar}


def _ratio_db(numerator: float, denominator: float, clamp: bool) -> float:
    if numerator <= 0:
        return -RATIO_CLAMP_DB if clamp else -math.inf
    if denominator <= 0:
        return RATIO_CLAMP_DB if clamp else math.inf
    value = 10.0 * math.log10(numerator / denominator)
    if clamp:
        value = min(max(value, -RATIO_CLAMP_DB), RATIO_CLAMP_DB)
    return value


def ratios(dec: Decomposition, clamp: bool = True) -> BssRatios:
    """
    SDR, SIR and SAR in dB from a decomposition.

    SAR uses E[s_target + e_interf] in full_fir mode and E[s_target] in
    scale_invariant mode, so that 10^(-SDR/10) = 10^(-SIR/10) + 10^(-SAR/10)
    holds for the scale-invariant ratios. Zero numerators give -30 dB, zero
    denominators +30 dB.
    """
    target_energy = dec.s_target.energy()
    interf_energy = dec.e_interf.energy()
    artif_energy = dec.e_artif.energy()
    distortion_energy = (dec.e_interf + dec.e_artif).energy()

    if dec.mode == DecompositionMode.FULL_FIR:
        sar_numerator = dec.sa_reference.energy()
    else:
        sar_numerator = target_energy

    return BssRatios(sdr=_ratio_db(target_energy, distortion_energy, clamp),
                     sir=_ratio_db(target_energy, interf_energy, clamp),
                     sar=_ratio_db(sar_numerator, artif_energy, clamp))


class DelayedBasis:
    """
    The family {s_k[t - d] : k < K, 0 <= d < L} over the padded support n + L - 1.

    Correlations are computed once in the frequency domain, the way the BSS Eval
    toolbox builds its block-Toeplitz normal equations.
    """

    def __init__(self, signals: np.ndarray, filter_len: int):
        signals = np.atleast_2d(np.asarray(signals, dtype=float))
        if signals.shape[0] == 0 or signals.shape[1] == 0:
            raise ValueError("Projection basis needs at least one non-empty signal")
        if filter_len < 1:
            raise ValueError(f"Filter length must be >= 1, got {filter_len}")
        self.signals = signals
        self.filter_len = int(filter_len)
        self.count, self.length = signals.shape
        self.n_fft = 2 ** int(math.ceil(math.log2(self.padded_length)))
        self._spectra = rfft(signals, self.n_fft, axis=1)

    @property
    def padded_length(self) -> int:
        return self.length + self.filter_len - 1

    @property
    def dim(self) -> int:
        return self.count * self.filter_len

    def gram(self) -> np.ndarray:
        L = self.filter_len
        gram = np.zeros((self.dim, self.dim))
        for i in range(self.count):
            for j in range(i, self.count):
                xcorr = irfft(np.conj(self._spectra[i]) * self._spectra[j], self.n_fft)
                block = toeplitz(xcorr[:L], np.concatenate(([xcorr[0]], xcorr[:-L:-1])))
                gram[i * L:(i + 1) * L, j * L:(j + 1) * L] = block
                gram[j * L:(j + 1) * L, i * L:(i + 1) * L] = block.T
        return gram

    def correlate(self, y: np.ndarray) -> np.ndarray:
        """Inner products of y (zero-padded to the basis support) with every basis vector."""
        y = np.asarray(y, dtype=float)
        if len(y) > self.padded_length:
            raise ValueError(f"Vector of length {len(y)} exceeds basis support {self.padded_length}")
        y_spectrum = rfft(y, self.n_fft)
        xcorr = irfft(np.conj(self._spectra) * y_spectrum, self.n_fft, axis=1)
        return xcorr[:, :self.filter_len].reshape(-1)

    def synthesize(self, coeffs: np.ndarray, count: Optional[int] = None) -> np.ndarray:
        """Sum of the first `count` signals filtered by their coefficient rows."""
        count = self.count if count is None else count
        coeffs = np.asarray(coeffs, dtype=float).reshape(count, self.filter_len)
        out = np.zeros(self.padded_length)
        for k in range(count):
            out += fftconvolve(self.signals[k], coeffs[k])[:self.padded_length]
        return out


def _regularized_solve(gram: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """
    Solve (G + lambda I) c = rhs with lambda = 1e-10 * trace(G) / dim(G), then
    refine twice against the unregularized system.
    """
    dim = gram.shape[0]
    trace = float(np.trace(gram))
    if trace <= 0:
        return np.zeros(dim)
    regularized = gram + (TIKHONOV_SCALE * trace / dim) * np.eye(dim)

    try:
        factor = cho_factor(regularized, lower=True, check_finite=False)

        def solve(b):
            return cho_solve(factor, b, check_finite=False)
    except LinAlgError:
        logger.debug("Cholesky failed on regularized Gram matrix, using least squares")

        def solve(b):
            return lstsq(regularized, b, check_finite=False)[0]

    coeffs = solve(rhs)
    for _ in range(REFINEMENT_STEPS):
        coeffs = coeffs + solve(rhs - gram @ coeffs)
    return coeffs


def solve_projection(basis: DelayedBasis, y: np.ndarray) -> np.ndarray:
    """Least-squares filter coefficients, shaped (signals, filter_len), minimizing ||y - sum c * b||^2."""
    coeffs = _regularized_solve(basis.gram(), basis.correlate(y))
    return coeffs.reshape(basis.count, basis.filter_len)


def _check_references(y: AudioSignal, target_ref: AudioSignal,
                      other_refs: Sequence[AudioSignal]):
    check_compatible(y, target_ref, 'test and target reference')
    for i, ref in enumerate(other_refs):
        check_compatible(y, ref, f'test and other reference {i}')


def decompose_bsseval(y: AudioSignal, target_ref: AudioSignal,
                      other_refs: Optional[Sequence[AudioSignal]] = None,
                      filter_len: int = DEFAULT_FILTER_LEN,
                      max_basis_dim: int = DEFAULT_MAX_BASIS_DIM) -> Decomposition:
    """
    Time-invariant FIR projection decomposition.

    Each channel of y is projected onto delayed copies (0..L-1) of every channel
    of every reference. s_target is the projection onto the target's channels,
    e_interf the remainder of the full projection, e_artif what no projection
    explains.
    """
    other_refs: List[AudioSignal] = list(other_refs or [])
    _check_references(y, target_ref, other_refs)
    if filter_len < 1:
        raise ValueError(f"Filter length must be >= 1, got {filter_len}")

    n_ch = y.channel_count
    rows = np.vstack([target_ref.samples] + [ref.samples for ref in other_refs])
    dim = rows.shape[0] * filter_len
    if dim > max_basis_dim:
        raise ValueError(f"Projection basis dimension {dim} exceeds the cap of {max_basis_dim} "
                         f"({rows.shape[0]} reference channels x {filter_len} taps)")

    basis = DelayedBasis(rows, filter_len)
    gram = basis.gram()
    target_dim = n_ch * filter_len
    target_gram = gram[:target_dim, :target_dim]

    s_target = np.zeros((n_ch, basis.padded_length))
    projection = np.zeros_like(s_target)
    for ch in range(n_ch):
        cross = basis.correlate(y.channel(ch))
        target_coeffs = _regularized_solve(target_gram, cross[:target_dim])
        s_target[ch] = basis.synthesize(target_coeffs, count=n_ch)
        if other_refs:
            projection[ch] = basis.synthesize(_regularized_solve(gram, cross))
        else:
            projection[ch] = s_target[ch]

    y_padded = np.pad(y.samples, ((0, 0), (0, filter_len - 1)))
    rate = y.sample_rate
    logger.debug(f"FIR decomposition: {n_ch} ch, basis dim {dim}, {len(other_refs)} interferers")
    return Decomposition(s_target=AudioSignal(s_target, rate),
                         e_interf=AudioSignal(projection - s_target, rate),
                         e_artif=AudioSignal(y_padded - projection, rate),
                         mode=DecompositionMode.FULL_FIR,
                         filter_len=filter_len)


def decompose_si(y: AudioSignal, target_ref: AudioSignal,
                 other_refs: Optional[Sequence[AudioSignal]] = None) -> Decomposition:
    """
    Scale-invariant decomposition over all channels at once.

    s_target = alpha * s_t with alpha = <y, s_t> / <s_t, s_t>; P projects onto
    span{s_t, other refs}; e_interf = P(y) - s_target and e_artif = y - P(y).
    """
    other_refs = list(other_refs or [])
    _check_references(y, target_ref, other_refs)

    y_vec = y.flatten()
    target_vec = target_ref.flatten()
    target_energy = float(np.dot(target_vec, target_vec))
    if target_energy == 0:
        raise ValueError("Target reference has zero energy; scale factor is undefined")

    alpha = float(np.dot(y_vec, target_vec)) / target_energy
    s_target = alpha * target_vec
    if other_refs:
        basis = np.vstack([target_vec] + [ref.flatten() for ref in other_refs])
        coeffs = _regularized_solve(basis @ basis.T, basis @ y_vec)
        projection = coeffs @ basis
    else:
        projection = s_target

    return Decomposition(s_target=y.with_samples(s_target),
                         e_interf=y.with_samples(projection - s_target),
                         e_artif=y.with_samples(y_vec - projection),
                         mode=DecompositionMode.SCALE_INVARIANT)
