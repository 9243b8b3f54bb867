"""
Results table persistence.
One row per (test_id, item_id, condition_id, measure) with value, validity and note.
"""

import logging
import math
from pathlib import Path
from typing import List, Optional, Sequence, Union

import pandas as pd

from quality_models import ItemKey, MeasureResult

logger = logging.getLogger(__name__)

KEY_COLUMNS = ['test_id', 'item_id', 'condition_id', 'measure']
RESULT_COLUMNS = KEY_COLUMNS + ['value', 'valid', 'note']


class ResultsStore:
    """Accumulates measure results and reads/writes the results CSV."""

    def __init__(self, frame: Optional[pd.DataFrame] = None):
        self._records: List[dict] = []
        if frame is not None:
            self._records = frame[RESULT_COLUMNS].to_dict('records')

    def add_result(self, key: ItemKey, result: MeasureResult):
        self._records.append({
            'test_id': key.test_id,
            'item_id': key.item_id,
            'condition_id': key.condition_id,
            'measure': result.measure_name,
            'value': result.value if result.valid else None,
            'valid': result.valid,
            'note': result.failure_note,
        })

    def __len__(self) -> int:
        return len(self._records)

    def to_frame(self) -> pd.DataFrame:
        """Rows sorted by key, so output does not depend on evaluation order."""
        if not self._records:
            return pd.DataFrame(columns=RESULT_COLUMNS)
        df = pd.DataFrame(self._records, columns=RESULT_COLUMNS)
        df = df.sort_values(KEY_COLUMNS, kind='mergesort').reset_index(drop=True)
        df['value'] = pd.to_numeric(df['value'], errors='coerce')
        df['valid'] = df['valid'].astype(bool)
        df['note'] = df['note'].fillna('').astype(str)
        return df

    @property
    def valid_count(self) -> int:
        return sum(1 for r in self._records if r['valid'])

    @property
    def invalid_count(self) -> int:
        return len(self._records) - self.valid_count

    def save(self, path: Union[str, Path]):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        df = self.to_frame()
        df['valid'] = df['valid'].map({True: 'true', False: 'false'})
        df.to_csv(path, index=False, lineterminator='\n')
        logger.info(f"Wrote {len(df)} result rows to {path}")


def _parse_valid(value) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ('true', '1', 'yes'):
        return True
    if text in ('false', '0', 'no', ''):
        return False
    raise ValueError(f"Invalid 'valid' entry: {value!r}")


def load_results(paths: Sequence[Union[str, Path]]) -> pd.DataFrame:
    """
    Read and concatenate results CSVs, e.g. native results plus scores injected
    from other tools. For a key given more than once the last file wins.
    """
    frames = []
    for path in paths:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Results file not found: {path}")
        df = pd.read_csv(path, dtype={c: str for c in KEY_COLUMNS + ['note']},
                         keep_default_na=False, na_values={'value': ['']})
        missing = [c for c in KEY_COLUMNS + ['value'] if c not in df.columns]
        if missing:
            raise ValueError(f"{path}: results file lacks columns {', '.join(missing)}")
        if 'valid' not in df.columns:
            df['valid'] = True
        if 'note' not in df.columns:
            df['note'] = ''
        df['valid'] = df['valid'].map(_parse_valid).astype(bool)
        df['value'] = pd.to_numeric(df['value'], errors='coerce')
        frames.append(df[RESULT_COLUMNS])
        logger.info(f"Read {len(df)} result rows from {path}")

    if not frames:
        return pd.DataFrame(columns=RESULT_COLUMNS)
    combined = pd.concat(frames, ignore_index=True)
    duplicated = combined.duplicated(subset=KEY_COLUMNS, keep='last')
    if duplicated.any():
        logger.warning(f"{int(duplicated.sum())} result rows superseded by later files")
        combined = combined[~duplicated].copy()

    # a valid row needs a finite value
    bad = combined['valid'] & ~combined['value'].map(lambda v: isinstance(v, float) and math.isfinite(v))
    if bad.any():
        logger.warning(f"{int(bad.sum())} rows marked valid without a finite value; treated as invalid")
        combined.loc[bad, 'valid'] = False
    return combined.sort_values(KEY_COLUMNS, kind='mergesort').reset_index(drop=True)


def valid_values(results: pd.DataFrame, measure: str) -> pd.Series:
    """Valid rows of one measure, indexed by (test_id, item_id, condition_id)."""
    rows = results[(results['measure'] == measure) & results['valid']]
    return rows.set_index(['test_id', 'item_id', 'condition_id'])['value']


