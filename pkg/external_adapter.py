"""
Client for external quality measurement tools.
Runs a configured executable on a pair of temporary WAV files and parses its stdout.
"""

import logging
import os
import re
import subprocess
import tempfile
import threading
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from audio_signal import AudioSignal, load_wav, resample, save_wav
from quality_models import (ItemKey, Measure, MeasureDescriptor, MeasureResult, MovSource,
                            evaluate)
from run_config import AdapterConfig, temp_dir

logger = logging.getLogger(__name__)

STDERR_NOTE_CHARS = 500

_slots_lock = threading.Lock()
_subprocess_slots = threading.BoundedSemaphore(os.cpu_count() or 1)


class AdapterError(RuntimeError):
    """The external tool failed, timed out or printed no parsable result."""


def set_subprocess_limit(limit: int):
    """Cap the number of tool processes running at once."""
    global _subprocess_slots
    if limit < 1:
        raise ValueError(f"Subprocess limit must be >= 1, got {limit}")
    with _slots_lock:
        _subprocess_slots = threading.BoundedSemaphore(limit)
    logger.debug(f"External tool concurrency limited to {limit}")


class ExternalTool:
    """One configured external measurement tool."""

    def __init__(self, config: AdapterConfig):
        self.config = config
        self.pattern = re.compile(config.pattern, re.MULTILINE)

    def build_command(self, ref_path: str, test_path: str) -> List[str]:
        args = [a.replace('{ref}', ref_path).replace('{test}', test_path) for a in self.config.args]
        return [self.config.executable] + args

    def run(self, reference: AudioSignal, test: AudioSignal) -> re.Match:
        """
        Write both signals to a private temp directory and run the tool on them.

        Returns the pattern match on stdout; raises AdapterError otherwise.
        """
        name = self.config.name
        with tempfile.TemporaryDirectory(prefix=f"qe_{name}_", dir=temp_dir()) as tmp:
            ref_path = str(Path(tmp) / 'ref.wav')
            test_path = str(Path(tmp) / 'test.wav')
            save_wav(reference, ref_path, self.config.wav_subtype)
            save_wav(test, test_path, self.config.wav_subtype)

            command = self.build_command(ref_path, test_path)
            logger.debug(f"Running {name}: {' '.join(command)}")
            with _subprocess_slots:
                try:
                    proc = subprocess.run(command, capture_output=True, text=True,
                                          timeout=self.config.timeout)
                except subprocess.TimeoutExpired:
                    raise AdapterError(f"{name}: timeout after {self.config.timeout:g} s")
                except OSError as e:
                    raise AdapterError(f"{name}: could not start {self.config.executable}: {e}")

        if proc.returncode != 0:
            stderr = (proc.stderr or '').strip()[-STDERR_NOTE_CHARS:]
            raise AdapterError(f"{name}: exit status {proc.returncode}; stderr: {stderr}")

        match = self.pattern.search(proc.stdout or '')
        if match is None:
            raise AdapterError(f"{name}: no match for pattern {self.config.pattern!r} in output")
        return match

    def score(self, reference: AudioSignal, test: AudioSignal) -> float:
        match = self.run(reference, test)
        if match.re.groups < 1:
            raise AdapterError(f"{self.config.name}: pattern has no capture group")
        try:
            return float(match.group(1))
        except (TypeError, ValueError):
            raise AdapterError(f"{self.config.name}: cannot parse score from {match.group(0)!r}")

    def movs(self, reference: AudioSignal, test: AudioSignal) -> Tuple[float, float]:
        match = self.run(reference, test)
        groups: Dict[str, Optional[str]] = match.groupdict()
        try:
            return float(groups['adb']), float(groups['avg_mod_diff_1'])
        except (KeyError, TypeError, ValueError):
            raise AdapterError(f"{self.config.name}: pattern must capture adb and "
                               f"avg_mod_diff_1, got {match.group(0)!r}")


class ExternalToolMeasure(Measure):
    def __init__(self, config: AdapterConfig):
        self.tool = ExternalTool(config)
        self.descriptor = MeasureDescriptor(config.name, config.scale_min, config.scale_max,
                                            higher_is_better=config.higher_is_better,
                                            required_rate=config.required_rate,
                                            stereo_policy=config.stereo_policy)

    def compute(self, reference, test, sources, item):
        return self.tool.score(reference, test)


class AdapterMovSource(MovSource):
    """MOVs from an external PEAQ-style tool, resampled to its required rate."""

    def __init__(self, config: AdapterConfig):
        self.tool = ExternalTool(config)
        self.required_rate = config.required_rate

    def movs(self, reference, test, item: Optional[ItemKey]):
        if self.required_rate is not None:
            reference = resample(reference, self.required_rate)
            test = resample(test, self.required_rate)
        return self.tool.movs(reference, test)


def external_adapter_run(config: AdapterConfig, reference_path, test_path) -> MeasureResult:
    """
    Score one WAV pair with an external tool.

    Loading, process and parse failures all come back as valid=False results.
    """
    try:
        reference = load_wav(reference_path)
        test = load_wav(test_path)
    except Exception as e:
        logger.error(f"✗ {config.name}: cannot load inputs: {e}")
        return MeasureResult.failure(config.name, f"{type(e).__name__}: {e}")
    return evaluate(ExternalToolMeasure(config), reference, test)
