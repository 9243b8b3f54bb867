"""
Run configuration for batch evaluation.
Loaded from a JSON file; relative paths resolve against the file's directory.
"""

import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

logger = logging.getLogger(__name__)

DEFAULT_TARGET_RATE = 48000
DEFAULT_ADAPTER_RATE = 16000
TMPDIR_ENV = 'QUALITY_EVAL_TMPDIR'


def _resolve(path: Optional[str], base_dir: Path) -> Optional[str]:
    if path is None:
        return None
    p = Path(path).expanduser()
    if not p.is_absolute():
        p = base_dir / p
    return str(p)


@dataclass
class AdapterConfig:
    """
    External measurement tool invoked once per item.

    args may contain {ref} and {test}, replaced by temporary WAV paths. pattern is
    a regular expression applied to stdout: one capture group for a scalar score,
    or the named groups adb and avg_mod_diff_1 for a MOV tool.
    """
    name: str
    executable: str
    args: List[str]
    pattern: str
    timeout: float = 60.0
    required_rate: Optional[int] = DEFAULT_ADAPTER_RATE
    scale_min: float = 0.0
    scale_max: float = 100.0
    higher_is_better: bool = True
    stereo_policy: str = 'channel_mean'
    wav_subtype: str = 'FLOAT'

    def __post_init__(self):
        if not self.name:
            raise ValueError("Adapter needs a name")
        if not self.executable:
            raise ValueError(f"Adapter {self.name}: executable is required")
        if self.timeout <= 0:
            raise ValueError(f"Adapter {self.name}: timeout must be positive")
        if self.stereo_policy not in ('channel_mean', 'native'):
            raise ValueError(f"Adapter {self.name}: unknown stereo policy {self.stereo_policy}")
        if not any('{ref}' in a for a in self.args) or not any('{test}' in a for a in self.args):
            logger.warning(f"Adapter {self.name}: argument template lacks {{ref}} or {{test}}")

    @classmethod
    def from_dict(cls, data: Dict[str, Any], base_dir: Path) -> 'AdapterConfig':
        data = dict(data)
        executable = data.get('executable', '')
        # bare command names are looked up on PATH
        if executable and (os.sep in executable or executable.startswith('.')):
            data['executable'] = _resolve(executable, base_dir)
        data['args'] = list(data.get('args', []))
        try:
            return cls(**data)
        except TypeError as e:
            raise ValueError(f"Invalid adapter entry {data.get('name', '?')}: {e}") from e


@dataclass
class TwoFConfig:
    """2f-model backend: parameter file plus a source of MOV values."""
    params_file: str
    mov_sidecar: Optional[str] = None
    sa_mov_sidecar: Optional[str] = None
    mov_adapter: Optional[AdapterConfig] = None

    @classmethod
    def from_dict(cls, data: Dict[str, Any], base_dir: Path) -> 'TwoFConfig':
        if 'params_file' not in data:
            raise ValueError("two_f section needs params_file")
        adapter = data.get('mov_adapter')
        return cls(params_file=_resolve(data['params_file'], base_dir),
                   mov_sidecar=_resolve(data.get('mov_sidecar'), base_dir),
                   sa_mov_sidecar=_resolve(data.get('sa_mov_sidecar'), base_dir),
                   mov_adapter=AdapterConfig.from_dict(adapter, base_dir) if adapter else None)


@dataclass
class MeasureSpec:
    name: str
    params: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_value(cls, value) -> 'MeasureSpec':
        if isinstance(value, str):
            return cls(name=value)
        if isinstance(value, dict) and 'name' in value:
            return cls(name=value['name'], params=dict(value.get('params', {})))
        raise ValueError(f"Invalid measure entry: {value!r}")


@dataclass
class RunConfig:
    measures: List[MeasureSpec] = field(default_factory=list)
    adapters: List[AdapterConfig] = field(default_factory=list)
    two_f: Optional[TwoFConfig] = None
    target_rate: int = DEFAULT_TARGET_RATE
    parallelism: int = 1
    subprocess_limit: int = field(default_factory=lambda: os.cpu_count() or 1)
    seed: int = 0
    filter_len: int = 512
    max_basis_dim: int = 8192
    results_path: Optional[str] = None

    def __post_init__(self):
        if self.target_rate <= 0:
            raise ValueError(f"target_rate must be positive, got {self.target_rate}")
        if self.parallelism < 1:
            raise ValueError(f"parallelism must be >= 1, got {self.parallelism}")
        if self.subprocess_limit < 1:
            raise ValueError(f"subprocess_limit must be >= 1, got {self.subprocess_limit}")
        if self.filter_len < 1:
            raise ValueError(f"filter_len must be >= 1, got {self.filter_len}")
        names = [a.name for a in self.adapters]
        if len(names) != len(set(names)):
            raise ValueError("Adapter names must be unique")

    @classmethod
    def from_dict(cls, data: Dict[str, Any], base_dir: Path) -> 'RunConfig':
        known = {'measures', 'adapters', 'two_f', 'target_rate', 'parallelism',
                 'subprocess_limit', 'seed', 'filter_len', 'max_basis_dim', 'results_path'}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"Unknown run config keys: {', '.join(sorted(unknown))}")

        kwargs = {k: data[k] for k in ('target_rate', 'parallelism', 'subprocess_limit',
                                       'seed', 'filter_len', 'max_basis_dim') if k in data}
        return cls(measures=[MeasureSpec.from_value(m) for m in data.get('measures', [])],
                   adapters=[AdapterConfig.from_dict(a, base_dir) for a in data.get('adapters', [])],
                   two_f=TwoFConfig.from_dict(data['two_f'], base_dir) if data.get('two_f') else None,
                   results_path=_resolve(data.get('results_path'), base_dir),
                   **kwargs)


def load_run_config(path: str) -> RunConfig:
    """Load a JSON run config."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Run config not found: {path}")
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ValueError(f"{path}:{e.lineno}: invalid JSON: {e.msg}") from e
    if not isinstance(data, dict):
        raise ValueError(f"{path}: run config must be a JSON object")

    config = RunConfig.from_dict(data, path.parent.resolve())
    logger.debug(f"Loaded run config {path}: {len(config.measures)} measures, "
                 f"{len(config.adapters)} adapters")
    return config


def temp_dir() -> Optional[str]:
    """Directory for adapter temp files, from QUALITY_EVAL_TMPDIR if set."""
    return os.environ.get(TMPDIR_ENV) or None
