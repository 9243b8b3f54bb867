"""
Listening-test manifests: rated items, their references and the per-measure
exclusion flags. JSON is authoritative; a flat CSV can be imported.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Set, Tuple

import pandas as pd

logger = logging.getLogger(__name__)

SCORE_RANGE = (0.0, 100.0)
SCREENED_ROLES = ('anchor', 'reference')
CSV_LIST_SEPARATOR = ';'


class ManifestError(ValueError):
    """Schema violation, located by file and line when possible."""

    def __init__(self, message: str, path: Optional[Path] = None, line: Optional[int] = None):
        self.path = path
        self.line = line
        location = ''
        if path is not None:
            location = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(f"{location}{message}")


@dataclass(frozen=True)
class ManifestItem:
    item_id: str
    condition_id: str
    test_path: str
    ref_target_path: str
    other_ref_paths: Tuple[str, ...] = ()
    score_mean: float = 0.0
    n_ratings: Optional[int] = None


@dataclass
class Manifest:
    """One listening test."""
    test_id: str
    items: List[ManifestItem]
    exclusions: Set[str] = field(default_factory=set)  # measures whose aggregate skips this test
    pool: str = 'default'
    criterion: str = 'baq'
    notes: str = ''


@dataclass
class Dataset:
    tests: List[Manifest]
    path: Optional[Path] = None

    def items(self) -> Iterator[Tuple[Manifest, ManifestItem]]:
        for test in self.tests:
            for item in test.items:
                yield test, item

    def groups(self) -> List[Tuple[str, str]]:
        """Distinct (pool, criterion) pairs, sorted."""
        return sorted(set((t.pool, t.criterion) for t in self.tests))

    def tests_in_group(self, pool: str, criterion: str) -> List[Manifest]:
        return [t for t in self.tests if t.pool == pool and t.criterion == criterion]

    def exclusions_by_measure(self, tests: Optional[List[Manifest]] = None) -> Dict[str, Set[str]]:
        result: Dict[str, Set[str]] = {}
        for test in (self.tests if tests is None else tests):
            for measure in test.exclusions:
                result.setdefault(measure, set()).add(test.test_id)
        return result

    @property
    def item_count(self) -> int:
        return sum(len(t.items) for t in self.tests)


def _line_of(text: Optional[str], needle: str, start_line: int = 1) -> Optional[int]:
    """First line at or after start_line containing needle."""
    if text is None:
        return None
    for lineno, line in enumerate(text.splitlines(), 1):
        if lineno >= start_line and needle in line:
            return lineno
    return None


def _resolve(path: str, base_dir: Path) -> str:
    p = Path(path).expanduser()
    if not p.is_absolute():
        p = base_dir / p
    return str(p.resolve())


def _parse_exclusions(value: Any) -> Set[str]:
    if value is None:
        return set()
    if isinstance(value, dict):
        return {name for name, excluded in value.items() if excluded}
    if isinstance(value, (list, tuple)):
        return {str(v) for v in value}
    raise ValueError("exclusions must be a list of measure names or a name -> bool map")


class _Parser:
    """Builds a Dataset from decoded JSON, reporting errors with line numbers."""

    def __init__(self, path: Optional[Path], text: Optional[str], base_dir: Path, check_paths: bool):
        self.path = path
        self.text = text
        self.base_dir = base_dir
        self.check_paths = check_paths

    def error(self, message: str, needle: Optional[str] = None, start_line: int = 1,
              line: Optional[int] = None) -> ManifestError:
        if line is None and needle:
            line = _line_of(self.text, needle, start_line)
        return ManifestError(message, self.path, line)

    def parse(self, data: Any) -> Dataset:
        if not isinstance(data, dict) or not isinstance(data.get('tests'), list):
            raise self.error("manifest must be an object with a 'tests' list")

        tests = []
        seen: Set[Tuple[str, str, str]] = set()
        for raw_test in data['tests']:
            test = self.parse_test(raw_test, seen)
            if any(t.test_id == test.test_id for t in tests):
                raise self.error(f"duplicate test_id {test.test_id!r}", json.dumps(test.test_id))
            tests.append(test)
        return Dataset(tests=tests, path=self.path)

    def parse_test(self, raw: Any, seen: Set[Tuple[str, str, str]]) -> Manifest:
        if not isinstance(raw, dict) or 'test_id' not in raw:
            raise self.error("every test needs a test_id")
        test_id = str(raw['test_id'])
        test_line = _line_of(self.text, json.dumps(test_id)) or 1
        if not isinstance(raw.get('items'), list):
            raise self.error(f"test {test_id!r} needs an 'items' list", json.dumps(test_id))
        try:
            exclusions = _parse_exclusions(raw.get('exclusions'))
        except ValueError as e:
            raise self.error(f"test {test_id!r}: {e}", '"exclusions"', test_line)

        items = []
        for raw_item in raw['items']:
            item = self.parse_item(test_id, raw_item, test_line)
            if item is None:
                continue
            key = (test_id, item.item_id, item.condition_id)
            if key in seen:
                raise self.error(f"duplicate item {'/'.join(key)}",
                                 json.dumps(item.item_id), test_line, raw_item.get('_line'))
            seen.add(key)
            items.append(item)

        return Manifest(test_id=test_id, items=items, exclusions=exclusions,
                        pool=str(raw.get('pool', 'default')),
                        criterion=str(raw.get('criterion', 'baq')),
                        notes=str(raw.get('notes', '')))

    def parse_item(self, test_id: str, raw: Any, test_line: int) -> Optional[ManifestItem]:
        if not isinstance(raw, dict):
            raise self.error(f"test {test_id!r}: items must be objects", None)
        item_id = str(raw.get('item_id', ''))
        needle = json.dumps(item_id) if item_id else None

        def fail(message: str) -> ManifestError:
            return self.error(f"{test_id}/{item_id or '?'}: {message}", needle, test_line,
                              raw.get('_line'))

        for key in ('item_id', 'condition_id', 'test_path', 'ref_target_path', 'score_mean'):
            if key not in raw:
                raise fail(f"missing field {key!r}")

        role = raw.get('role')
        if role in SCREENED_ROLES:
            logger.info(f"Dropping {role} condition {test_id}/{item_id}/{raw['condition_id']}")
            return None

        try:
            score = float(raw['score_mean'])
        except (TypeError, ValueError):
            raise fail(f"score_mean is not a number: {raw['score_mean']!r}")
        if not (math.isfinite(score) and SCORE_RANGE[0] <= score <= SCORE_RANGE[1]):
            raise fail(f"score_mean {score} outside [0, 100]")

        n_ratings = raw.get('n_ratings')
        if n_ratings is not None:
            if not isinstance(n_ratings, int) or n_ratings < 1:
                raise fail(f"n_ratings must be a positive integer, got {n_ratings!r}")

        others = raw.get('other_ref_paths', [])
        if not isinstance(others, list):
            raise fail("other_ref_paths must be a list")

        paths = [_resolve(str(raw['test_path']), self.base_dir),
                 _resolve(str(raw['ref_target_path']), self.base_dir)]
        other_paths = tuple(_resolve(str(p), self.base_dir) for p in others)
        if self.check_paths:
            for p in paths + list(other_paths):
                if not Path(p).exists():
                    raise fail(f"file not found: {p}")

        return ManifestItem(item_id=item_id, condition_id=str(raw['condition_id']),
                            test_path=paths[0], ref_target_path=paths[1],
                            other_ref_paths=other_paths, score_mean=score,
                            n_ratings=n_ratings)


def parse_manifest(text: str, base_dir: Path, path: Optional[Path] = None,
                   check_paths: bool = True) -> Dataset:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ManifestError(f"invalid JSON: {e.msg}", path, e.lineno) from e
    return _Parser(path, text, base_dir, check_paths).parse(data)


def load_manifest(path, check_paths: bool = True) -> Dataset:
    """
    Load a manifest; relative paths resolve against its directory.
    A .csv file goes through import_csv, anything else is parsed as JSON.
    """
    path = Path(path)
    if path.suffix.lower() == '.csv':
        return import_csv(path, check_paths)
    if not path.exists():
        raise FileNotFoundError(f"Manifest not found: {path}")
    text = path.read_text(encoding='utf-8')
    dataset = parse_manifest(text, path.parent.resolve(), path, check_paths)
    logger.info(f"Loaded manifest {path}: {len(dataset.tests)} tests, {dataset.item_count} items")
    return dataset


def serialize_manifest(dataset: Dataset) -> str:
    tests = []
    for test in dataset.tests:
        items = []
        for item in test.items:
            entry: Dict[str, Any] = {
                'item_id': item.item_id,
                'condition_id': item.condition_id,
                'test_path': item.test_path,
                'ref_target_path': item.ref_target_path,
                'other_ref_paths': list(item.other_ref_paths),
                'score_mean': item.score_mean,
            }
            if item.n_ratings is not None:
                entry['n_ratings'] = item.n_ratings
            items.append(entry)
        tests.append({'test_id': test.test_id, 'pool': test.pool, 'criterion': test.criterion,
                      'exclusions': sorted(test.exclusions), 'notes': test.notes,
                      'items': items})
    return json.dumps({'tests': tests}, indent=2) + '\n'


def save_manifest(dataset: Dataset, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(serialize_manifest(dataset), encoding='utf-8')
    logger.info(f"Saved manifest with {dataset.item_count} items to {path}")


def import_csv(path, check_paths: bool = True) -> Dataset:
    """
    Build a dataset from a flat CSV, one row per item.

    Columns: test_id, item_id, condition_id, test_path, ref_target_path,
    score_mean and optionally other_ref_paths, exclusions (both ';'-separated),
    n_ratings, pool, criterion, role.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Manifest CSV not found: {path}")
    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    required = ['test_id', 'item_id', 'condition_id', 'test_path', 'ref_target_path', 'score_mean']
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise ManifestError(f"missing columns: {', '.join(missing)}", path, 1)

    def split(value: str) -> List[str]:
        return [v.strip() for v in value.split(CSV_LIST_SEPARATOR) if v.strip()]

    tests: Dict[str, Dict[str, Any]] = {}
    for index, row in df.iterrows():
        line = int(index) + 2
        test_id = row['test_id']
        test = tests.setdefault(test_id, {'test_id': test_id, 'items': [], 'exclusions': set()})
        for key in ('pool', 'criterion'):
            value = row.get(key, '')
            if value:
                if key in test and test[key] != value:
                    raise ManifestError(f"conflicting {key} for test {test_id!r}", path, line)
                test[key] = value
        test['exclusions'].update(split(row.get('exclusions', '')))

        item: Dict[str, Any] = {k: row[k] for k in required if k != 'test_id'}
        item['_line'] = line
        item['other_ref_paths'] = split(row.get('other_ref_paths', ''))
        if row.get('role', ''):
            item['role'] = row['role']
        try:
            item['score_mean'] = float(row['score_mean'])
            if row.get('n_ratings', ''):
                item['n_ratings'] = int(row['n_ratings'])
        except ValueError as e:
            raise ManifestError(f"bad number: {e}", path, line) from e
        test['items'].append(item)

    data = {'tests': [dict(t, exclusions=sorted(t['exclusions'])) for t in tests.values()]}
    dataset = _Parser(path, None, path.parent.resolve(), check_paths).parse(data)
    logger.info(f"Imported {dataset.item_count} items in {len(dataset.tests)} tests from {path}")
    return dataset
