"""
Uniform full-reference measure interface.

Every measure is described by a MeasureDescriptor and evaluated through
evaluate(), which resamples, applies the stereo policy and turns any failure
into an invalid MeasureResult. Also holds the 2f-model MOV combiner and the
artifacts-only (SA) wrapper.
"""

import logging
import math
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import pandas as pd
from scipy.special import expit

from audio_signal import AudioSignal, channel_mean, require_mono_or_stereo, resample
from bss_decomposition import (DEFAULT_FILTER_LEN, DEFAULT_MAX_BASIS_DIM, RATIO_CLAMP_DB,
                               decompose_bsseval, decompose_si, ratios)
from speech_measures import DllrParams, FwSnrSegParams, dllr, fwsnrseg

logger = logging.getLogger(__name__)

TWO_F_RANGE = (0.0, 100.0)
MOV_NAMES = ('adb', 'avg_mod_diff_1')


class ItemKey(NamedTuple):
    test_id: str
    item_id: str
    condition_id: str


@dataclass(frozen=True)
class MeasureDescriptor:
    name: str
    scale_min: float
    scale_max: float
    higher_is_better: bool = True
    required_rate: Optional[int] = None  # None: native rate
    needs_sources: bool = False
    stereo_policy: str = 'native'  # or 'channel_mean': evaluate each channel separately

    def __post_init__(self):
        if not self.name:
            raise ValueError("Measure name must not be empty")
        if not self.scale_min < self.scale_max:
            raise ValueError(f"Measure {self.name}: scale min {self.scale_min} "
                             f"must be below max {self.scale_max}")
        if self.stereo_policy not in ('native', 'channel_mean'):
            raise ValueError(f"Measure {self.name}: unknown stereo policy {self.stereo_policy}")


@dataclass(frozen=True)
class MeasureResult:
    measure_name: str
    value: Optional[float]
    valid: bool
    failure_note: str = ''

    @classmethod
    def success(cls, descriptor: MeasureDescriptor, value: float) -> 'MeasureResult':
        value = float(value)
        if not math.isfinite(value):
            return cls.failure(descriptor.name, f"non-finite value {value}")
        value = min(max(value, descriptor.scale_min), descriptor.scale_max)
        return cls(descriptor.name, value, True)

    @classmethod
    def failure(cls, measure_name: str, note: str) -> 'MeasureResult':
        return cls(measure_name, None, False, note or 'unknown failure')


@dataclass(frozen=True)
class SourceSet:
    """Reference sources of an item: the target image and any interferers."""
    target: AudioSignal
    others: Tuple[AudioSignal, ...] = ()

    def resampled(self, rate: int) -> 'SourceSet':
        return SourceSet(resample(self.target, rate), tuple(resample(s, rate) for s in self.others))


class Measure:
    """Base class: subclasses set descriptor and implement compute()."""

    descriptor: MeasureDescriptor

    @property
    def name(self) -> str:
        return self.descriptor.name

    def compute(self, reference: AudioSignal, test: AudioSignal,
                sources: Optional[SourceSet], item: Optional[ItemKey]) -> float:
        raise NotImplementedError


class FwSnrSegMeasure(Measure):
    def __init__(self, params: FwSnrSegParams = FwSnrSegParams(), name: str = 'fwsnrseg'):
        self.params = params
        lo, hi = params.snr_clamp
        self.descriptor = MeasureDescriptor(name, lo, hi, higher_is_better=True)

    def compute(self, reference, test, sources, item):
        return fwsnrseg(reference, test, self.params)


class DllrMeasure(Measure):
    def __init__(self, params: DllrParams = DllrParams(), name: str = 'dllr'):
        self.params = params
        self.descriptor = MeasureDescriptor(name, 0.0, params.per_frame_cap, higher_is_better=False)

    def compute(self, reference, test, sources, item):
        return dllr(reference, test, self.params)


class BssRatioMeasure(Measure):
    """One of SDR/SIR/SAR from the FIR or the scale-invariant decomposition."""

    def __init__(self, ratio: str, scale_invariant: bool,
                 filter_len: int = DEFAULT_FILTER_LEN,
                 max_basis_dim: int = DEFAULT_MAX_BASIS_DIM):
        if ratio not in ('sdr', 'sir', 'sar'):
            raise ValueError(f"Unknown ratio: {ratio}")
        self.ratio = ratio
        self.scale_invariant = scale_invariant
        self.filter_len = filter_len
        self.max_basis_dim = max_basis_dim
        name = f"si_{ratio}" if scale_invariant else ratio
        self.descriptor = MeasureDescriptor(name, -RATIO_CLAMP_DB, RATIO_CLAMP_DB,
                                            needs_sources=True)

    def compute(self, reference, test, sources, item):
        if self.scale_invariant:
            dec = decompose_si(test, sources.target, sources.others)
        else:
            dec = decompose_bsseval(test, sources.target, sources.others,
                                    self.filter_len, self.max_basis_dim)
        return getattr(ratios(dec), self.ratio)


class MappingKind(str, Enum):
    AFFINE = 'affine'
    LOGISTIC = 'logistic'


@dataclass(frozen=True)
class TwoFParams:
    """
    Coefficients of the 2f-model combiner.

    affine:   score = intercept + adb * ADB + avg_mod_diff_1 * AvgModDiff1
    logistic: score = 100 / (1 + exp(-(intercept + adb * ADB + avg_mod_diff_1 * AvgModDiff1)))
    """
    mapping: MappingKind
    intercept: float
    adb: float
    avg_mod_diff_1: float

    REQUIRED_KEYS = ('mapping', 'intercept', 'adb', 'avg_mod_diff_1')

    @classmethod
    def load(cls, path) -> 'TwoFParams':
        """Parse a key=value parameter file; '#' starts a comment. Every key is required."""
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"2f parameter file not found: {path}")

        values: Dict[str, str] = {}
        with open(path, 'r', encoding='utf-8') as f:
            for lineno, raw in enumerate(f, 1):
                line = raw.split('#', 1)[0].strip()
                if not line:
                    continue
                if '=' not in line:
                    raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
                key, value = (part.strip() for part in line.split('=', 1))
                if key not in cls.REQUIRED_KEYS:
                    raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
                if key in values:
                    raise ValueError(f"{path}:{lineno}: duplicate key {key!r}")
                values[key] = value

        missing = [k for k in cls.REQUIRED_KEYS if k not in values]
        if missing:
            raise ValueError(f"{path}: missing 2f parameters: {', '.join(missing)}")
        try:
            mapping = MappingKind(values['mapping'].lower())
        except ValueError:
            raise ValueError(f"{path}: mapping must be affine or logistic, got {values['mapping']!r}")
        try:
            coeffs = {k: float(values[k]) for k in ('intercept', 'adb', 'avg_mod_diff_1')}
        except ValueError as e:
            raise ValueError(f"{path}: non-numeric coefficient: {e}") from e
        if not all(math.isfinite(v) for v in coeffs.values()):
            raise ValueError(f"{path}: coefficients must be finite")
        return cls(mapping=mapping, **coeffs)


def two_f_combine(adb: float, avg_mod_diff_1: float, params: TwoFParams) -> float:
    """Map the two MOVs to a score in [0, 100]."""
    if not (math.isfinite(adb) and math.isfinite(avg_mod_diff_1)):
        raise ValueError(f"MOV values must be finite, got ADB={adb}, AvgModDiff1={avg_mod_diff_1}")
    linear = params.intercept + params.adb * adb + params.avg_mod_diff_1 * avg_mod_diff_1
    if params.mapping == MappingKind.LOGISTIC:
        score = 100.0 * float(expit(linear))
    else:
        score = linear
    return min(max(score, TWO_F_RANGE[0]), TWO_F_RANGE[1])


class MovSource:
    """Supplies (ADB, AvgModDiff1) for a reference/test pair."""

    def movs(self, reference: AudioSignal, test: AudioSignal,
             item: Optional[ItemKey]) -> Tuple[float, float]:
        raise NotImplementedError


class SidecarMovSource(MovSource):
    """
    MOV values read from a CSV sidecar with header item_id,adb,avg_mod_diff_1.

    Optional test_id and condition_id columns make the lookup use the full
    (test_id, item_id, condition_id) key.
    """

    def __init__(self, path):
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"MOV sidecar not found: {path}")
        df = pd.read_csv(path, dtype={'item_id': str, 'test_id': str, 'condition_id': str})
        missing = [c for c in ('item_id',) + MOV_NAMES if c not in df.columns]
        if missing:
            raise ValueError(f"{path}: MOV sidecar lacks columns {', '.join(missing)}")

        self.path = path
        self.full_key = 'test_id' in df.columns and 'condition_id' in df.columns
        key_cols = ['test_id', 'item_id', 'condition_id'] if self.full_key else ['item_id']
        if df.duplicated(subset=key_cols).any():
            raise ValueError(f"{path}: duplicate MOV rows for key {', '.join(key_cols)}")
        self._values: Dict[tuple, Tuple[float, float]] = {
            tuple(row[c] for c in key_cols): (float(row['adb']), float(row['avg_mod_diff_1']))
            for _, row in df.iterrows()
        }
        logger.debug(f"Loaded {len(self._values)} MOV rows from {path}")

    def movs(self, reference, test, item):
        if item is None:
            raise ValueError("MOV sidecar lookup needs an item key")
        key = tuple(item) if self.full_key else (item.item_id,)
        if key not in self._values:
            raise ValueError(f"No MOV values for {key} in {self.path}")
        return self._values[key]


class TwoFMeasure(Measure):
    def __init__(self, params: TwoFParams, mov_source: MovSource, name: str = 'two_f'):
        self.params = params
        self.mov_source = mov_source
        self.descriptor = MeasureDescriptor(name, TWO_F_RANGE[0], TWO_F_RANGE[1])

    def compute(self, reference, test, sources, item):
        adb, avg_mod_diff_1 = self.mov_source.movs(reference, test, item)
        return two_f_combine(adb, avg_mod_diff_1, self.params)


class MovValueMeasure(Measure):
    """A single raw MOV reported as a measure of its own."""

    def __init__(self, mov_name: str, mov_source: MovSource):
        if mov_name not in MOV_NAMES:
            raise ValueError(f"Unknown MOV: {mov_name}")
        self.mov_index = MOV_NAMES.index(mov_name)
        self.mov_source = mov_source
        self.descriptor = MeasureDescriptor(mov_name, -1e6, 1e6, higher_is_better=False)

    def compute(self, reference, test, sources, item):
        return self.mov_source.movs(reference, test, item)[self.mov_index]


class SaMeasure(Measure):
    """Artifacts-only variant of a base measure (see sa_wrap)."""

    def __init__(self, base: Measure, name: Optional[str] = None):
        self.base = base
        base_desc = base.descriptor
        self.descriptor = replace(base_desc, name=name or f"sa_{base_desc.name}",
                                  required_rate=None, needs_sources=True,
                                  stereo_policy='native')

    def compute(self, reference, test, sources, item):
        result = sa_wrap(self.base, test, sources.target, sources.others, item, self.name)
        if not result.valid:
            raise RuntimeError(result.failure_note)
        return result.value


def _channel(signal: AudioSignal, index: int) -> AudioSignal:
    return AudioSignal(signal.channel(index), signal.sample_rate)


def evaluate(measure: Measure, reference: AudioSignal, test: AudioSignal,
             sources: Optional[SourceSet] = None,
             item: Optional[ItemKey] = None) -> MeasureResult:
    """
    Run one measure on one item.

    Signals are resampled to the measure's required rate and, for measures with
    the channel_mean policy, scored per channel. Failures come back as
    valid=False results carrying the error text.
    """
    desc = measure.descriptor
    try:
        if desc.needs_sources and sources is None:
            raise ValueError(f"{desc.name} needs reference sources")
        if desc.required_rate is not None:
            reference = resample(reference, desc.required_rate)
            test = resample(test, desc.required_rate)
            if sources is not None:
                sources = sources.resampled(desc.required_rate)

        if desc.stereo_policy == 'channel_mean' and test.channel_count > 1:
            require_mono_or_stereo(test, desc.name)
            value = channel_mean([
                measure.compute(_channel(reference, ch), _channel(test, ch),
                                None if sources is None else SourceSet(
                                    _channel(sources.target, ch),
                                    tuple(_channel(s, ch) for s in sources.others)),
                                item)
                for ch in range(test.channel_count)])
        else:
            value = measure.compute(reference, test, sources, item)
        return MeasureResult.success(desc, value)
    except Exception as e:
        where = f" on {'/'.join(item)}" if item else ''
        logger.warning(f"✗ {desc.name} failed{where}: {e}")
        return MeasureResult.failure(desc.name, f"{type(e).__name__}: {e}")


def sa_wrap(base_measure: Measure, y: AudioSignal, target_ref: AudioSignal,
            other_refs: Sequence[AudioSignal] = (), item: Optional[ItemKey] = None,
            name: Optional[str] = None) -> MeasureResult:
    """
    Evaluate base_measure with s_target + e_interf (= y - e_artif) of the
    scale-invariant decomposition as reference and y as test, so that only
    artifacts are penalized.
    """
    name = name or f"sa_{base_measure.name}"
    other_refs = tuple(other_refs)
    try:
        dec = decompose_si(y, target_ref, other_refs)
    except Exception as e:
        logger.warning(f"✗ {name}: decomposition failed: {e}")
        return MeasureResult.failure(name, f"{type(e).__name__}: {e}")
    result = evaluate(base_measure, dec.sa_reference, y, SourceSet(target_ref, other_refs), item)
    return replace(result, measure_name=name)


class MeasureRegistry:
    """Name-indexed set of measures."""

    def __init__(self):
        self._measures: Dict[str, Measure] = {}

    def register(self, measure: Measure):
        if measure.name in self._measures:
            raise ValueError(f"Measure already registered: {measure.name}")
        self._measures[measure.name] = measure

    def get(self, name: str) -> Measure:
        if name not in self._measures:
            raise ValueError(f"Unknown measure: {name} (available: {', '.join(self.names())})")
        return self._measures[name]

    def names(self) -> List[str]:
        return list(self._measures)

    def __contains__(self, name: str) -> bool:
        return name in self._measures

    def __len__(self) -> int:
        return len(self._measures)


def create_registry(fwsnrseg_params: FwSnrSegParams = FwSnrSegParams(),
                    dllr_params: DllrParams = DllrParams(),
                    filter_len: int = DEFAULT_FILTER_LEN,
                    max_basis_dim: int = DEFAULT_MAX_BASIS_DIM,
                    two_f_params: Optional[TwoFParams] = None,
                    mov_source: Optional[MovSource] = None,
                    sa_mov_source: Optional[MovSource] = None) -> MeasureRegistry:
    """
    Registry of the built-in measures.

    The 2f-model measures appear only when parameters and a MOV source are given;
    si_sa2f needs a source that can score the artifacts-only reference.
    """
    registry = MeasureRegistry()
    fw = FwSnrSegMeasure(fwsnrseg_params)
    dl = DllrMeasure(dllr_params)
    registry.register(fw)
    registry.register(dl)
    for scale_invariant in (False, True):
        for ratio in ('sdr', 'sir', 'sar'):
            registry.register(BssRatioMeasure(ratio, scale_invariant, filter_len, max_basis_dim))
    registry.register(SaMeasure(fw))
    registry.register(SaMeasure(dl))

    if mov_source is not None:
        for mov_name in MOV_NAMES:
            registry.register(MovValueMeasure(mov_name, mov_source))
        if two_f_params is not None:
            registry.register(TwoFMeasure(two_f_params, mov_source))
    if two_f_params is not None and sa_mov_source is not None:
        registry.register(SaMeasure(TwoFMeasure(two_f_params, sa_mov_source), name='si_sa2f'))
    return registry
