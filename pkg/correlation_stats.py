"""
Correlation meta-analysis between measure outputs and subjective scores.

Pearson and Kendall coefficients per listening test, the sin(tau*pi/2) mapping,
significance tests, Fisher-z aggregation across tests and the ranked report
with pairwise difference columns.
"""

import logging
import math
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from enum import Enum
from typing import Dict, List, Mapping, Optional, Sequence, Set, Tuple

import numpy as np
from scipy import stats

logger = logging.getLogger(__name__)

ALPHA = 0.05
NORMAL_CRITICAL = float(stats.norm.ppf(1 - ALPHA / 2))
FISHER_CLIP = 0.999999
MIN_PAIRS = 3
MIN_SIGNIFICANCE_N = 4
VARIANCE_MODEL = 'Fisher-z variance 1/(N-3) per test, mean over k tests: sum/k^2'


class DegenerateCorrelationError(ValueError):
    """Correlation undefined because one of the score vectors is constant."""


class CorrelationKind(str, Enum):
    PEARSON = 'pearson'
    KENDALL = 'kendall'


def _as_pair(x: Sequence[float], y: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"X and Y must be equal-length vectors, got {x.shape} and {y.shape}")
    if len(x) < MIN_PAIRS:
        raise ValueError(f"Need at least {MIN_PAIRS} pairs, got {len(x)}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("Scores must be finite")
    return x, y


@dataclass(frozen=True)
class PairedScores:
    """Subjective means X and measure outputs Y of one test, invalid results already removed."""
    test_id: str
    x: Tuple[float, ...]
    y: Tuple[float, ...]

    def __post_init__(self):
        _as_pair(self.x, self.y)
        object.__setattr__(self, 'x', tuple(float(v) for v in self.x))
        object.__setattr__(self, 'y', tuple(float(v) for v in self.y))

    @property
    def n(self) -> int:
        return len(self.x)


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    """Signed Pearson correlation with compensated (fsum) accumulation."""
    x, y = _as_pair(x, y)
    n = len(x)
    dx = x - math.fsum(x) / n
    dy = y - math.fsum(y) / n
    sxx = math.fsum(dx * dx)
    syy = math.fsum(dy * dy)
    if sxx == 0 or syy == 0:
        raise DegenerateCorrelationError("Pearson correlation undefined for constant scores")
    r = math.fsum(dx * dy) / math.sqrt(sxx * syy)
    return min(max(r, -1.0), 1.0)


def kendall(x: Sequence[float], y: Sequence[float]) -> float:
    """
    Kendall's tau = 2K / (n(n-1)), K the sum over pairs of sign(dx) * sign(dy).

    Tied pairs contribute 0; there is no tie correction.
    """
    x, y = _as_pair(x, y)
    n = len(x)
    concordance = 0
    for i in range(n - 1):
        concordance += int(np.sum(np.sign(x[i + 1:] - x[i]) * np.sign(y[i + 1:] - y[i])))
    return 2.0 * concordance / (n * (n - 1))


def tau_prime(tau: float) -> float:
    """Map tau onto a scale comparable with Pearson's rho: sin(tau * pi / 2)."""
    if not -1.0 <= tau <= 1.0:
        raise ValueError(f"tau must be in [-1, 1], got {tau}")
    return math.sin(tau * math.pi / 2.0)


def corr_significance(coefficient: float, kind: CorrelationKind, n: int) -> bool:
    """
    Two-tailed test at alpha = 0.05.

    Pearson: t = r sqrt((N-2)/(1-r^2)) with N-2 degrees of freedom.
    Kendall: normal approximation z = tau / sqrt(2(2N+5) / (9N(N-1))).
    """
    if n < MIN_SIGNIFICANCE_N:
        raise ValueError(f"Significance needs N >= {MIN_SIGNIFICANCE_N}, got {n}")
    kind = CorrelationKind(kind)
    magnitude = abs(coefficient)
    if kind == CorrelationKind.PEARSON:
        if magnitude >= 1.0:
            return True
        t = magnitude * math.sqrt((n - 2) / (1.0 - magnitude * magnitude))
        return 2.0 * float(stats.t.sf(t, n - 2)) < ALPHA
    z = magnitude / math.sqrt(2.0 * (2 * n + 5) / (9.0 * n * (n - 1)))
    return z > NORMAL_CRITICAL


def clip_coefficient(gamma: float) -> Tuple[float, bool]:
    """Clip |gamma| to 0.999999; returns (value, was_clipped). |gamma| > 1 is an error."""
    if not math.isfinite(gamma) or abs(gamma) > 1.0:
        raise ValueError(f"Correlation coefficient out of range: {gamma}")
    if abs(gamma) > FISHER_CLIP:
        return math.copysign(FISHER_CLIP, gamma), True
    return gamma, False


def fisher_z(gamma: float) -> float:
    """z = 0.5 ln((1 + gamma) / (1 - gamma)), with gamma clipped at +-0.999999."""
    clipped, _ = clip_coefficient(gamma)
    return math.atanh(clipped)


def fisher_z_inv(z: float) -> float:
    return math.tanh(z)


@dataclass(frozen=True)
class CorrelationCell:
    """One (measure, test) cell. Coefficients keep their sign; reports use absolute values."""
    measure: str
    test_id: str
    n: int
    rho: float
    tau: float
    rho_significant: bool
    tau_significant: bool
    degenerate: bool = False

    @property
    def tau_prime(self) -> float:
        return tau_prime(self.tau)

    @property
    def rho_abs(self) -> float:
        return abs(self.rho)

    @property
    def tau_prime_abs(self) -> float:
        return abs(self.tau_prime)


def compute_cell(measure: str, paired: PairedScores) -> CorrelationCell:
    """Correlate one test's pairs; a constant score vector gives a degenerate cell with rho = 0."""
    degenerate = False
    try:
        rho = pearson(paired.x, paired.y)
    except DegenerateCorrelationError:
        logger.warning(f"{measure} on {paired.test_id}: constant scores, correlation reported as 0")
        rho, degenerate = 0.0, True
    tau = kendall(paired.x, paired.y)

    rho_sig = tau_sig = False
    if paired.n >= MIN_SIGNIFICANCE_N:
        rho_sig = not degenerate and corr_significance(rho, CorrelationKind.PEARSON, paired.n)
        tau_sig = corr_significance(tau, CorrelationKind.KENDALL, paired.n)
    return CorrelationCell(measure, paired.test_id, paired.n, rho, tau, rho_sig, tau_sig, degenerate)


@dataclass(frozen=True)
class AggregatedScore:
    measure: str
    rho_bar: float
    tau_prime_bar: float
    included_tests: Tuple[str, ...]
    excluded_tests: Tuple[str, ...]
    z_rho: float
    z_tau_prime: float
    z_variance: float
    clipped: bool = False


def aggregate(measure: str, cells: Mapping[str, CorrelationCell],
              exclusions: Optional[Set[str]] = None) -> AggregatedScore:
    """
    Fisher-z mean of |rho| and |tau'| over the non-excluded tests.

    The z-domain variance sum(1/(n_i - 3)) / k^2 is kept for difference tests;
    a test with n = 3 makes it infinite.
    """
    exclusions = set(exclusions or ())
    included = sorted(t for t in cells if t not in exclusions)
    excluded = sorted(t for t in cells if t in exclusions)
    if not included:
        raise ValueError(f"{measure}: every test is excluded from the aggregated score")

    clipped = False
    z_rho, z_tau = [], []
    for test_id in included:
        cell = cells[test_id]
        r, r_clipped = clip_coefficient(cell.rho_abs)
        t, t_clipped = clip_coefficient(cell.tau_prime_abs)
        clipped = clipped or r_clipped or t_clipped
        z_rho.append(math.atanh(r))
        z_tau.append(math.atanh(t))

    k = len(included)
    z_rho_mean = math.fsum(z_rho) / k
    z_tau_mean = math.fsum(z_tau) / k
    if any(cells[t].n <= 3 for t in included):
        variance = math.inf
    else:
        variance = math.fsum(1.0 / (cells[t].n - 3) for t in included) / (k * k)

    return AggregatedScore(measure=measure,
                           rho_bar=fisher_z_inv(z_rho_mean),
                           tau_prime_bar=fisher_z_inv(z_tau_mean),
                           included_tests=tuple(included),
                           excluded_tests=tuple(excluded),
                           z_rho=z_rho_mean,
                           z_tau_prime=z_tau_mean,
                           z_variance=variance,
                           clipped=clipped)


def aggregate_diff_statistic(a: AggregatedScore, b: AggregatedScore) -> float:
    variance = a.z_variance + b.z_variance
    if not math.isfinite(variance) or variance <= 0:
        return 0.0
    return (a.z_rho - b.z_rho) / math.sqrt(variance)


def aggregate_diff_significant(a: AggregatedScore, b: AggregatedScore) -> bool:
    """Two-tailed z test of the aggregated rho difference in the Fisher-z domain."""
    return abs(aggregate_diff_statistic(a, b)) > NORMAL_CRITICAL


def format_percent(value: float) -> str:
    """Percent relative to 1, rounded half away from zero: 0.937 -> '94'."""
    scaled = Decimal(repr(float(value))) * 100
    return str(int(scaled.quantize(Decimal('1'), rounding=ROUND_HALF_UP)))


def difference_symbol(index: int) -> str:
    """a, b, ..., z, aa, ab, ..."""
    letters = ''
    index += 1
    while index > 0:
        index, rem = divmod(index - 1, 26)
        letters = chr(ord('a') + rem) + letters
    return letters


@dataclass
class ReportRow:
    measure: str
    aggregated: Optional[AggregatedScore]
    cells: Dict[str, Optional[CorrelationCell]]
    excluded: Set[str] = field(default_factory=set)
    column_a: str = ''
    column_b: List[str] = field(default_factory=list)

    def render_cell(self, test_id: str) -> str:
        cell = self.cells.get(test_id)
        if cell is None:
            text = 'n/a'
        else:
            text = (f"{format_percent(cell.rho_abs)}{'*' if cell.rho_significant else ''} "
                    f"{format_percent(cell.tau_prime_abs)}{'*' if cell.tau_significant else ''}")
        if test_id in self.excluded:
            text += ' †'
        return text


@dataclass
class CorrelationReport:
    title: str
    test_ids: List[str]
    rows: List[ReportRow]
    alpha: float = ALPHA
    variance_model: str = VARIANCE_MODEL

    def row(self, measure: str) -> ReportRow:
        for row in self.rows:
            if row.measure == measure:
                return row
        raise KeyError(measure)


def _sort_key(row: ReportRow):
    if row.aggregated is None:
        return (1, 0.0, 0.0, row.measure)
    return (0, -row.aggregated.rho_bar, -row.aggregated.tau_prime_bar, row.measure)


def build_report(title: str, test_ids: Sequence[str],
                 cells: Mapping[str, Mapping[str, Optional[CorrelationCell]]],
                 exclusions: Mapping[str, Set[str]]) -> CorrelationReport:
    """
    Assemble the ranked report.

    cells maps measure -> test_id -> cell (None for n/a). Rows are sorted by
    rho_bar, then tau'_bar (both descending), then name. For each row, the
    nearest row below with a significantly different rho_bar gets the row's
    difference symbol in column B.
    """
    rows = []
    for measure in sorted(cells):
        measure_cells = dict(cells[measure])
        excluded = set(exclusions.get(measure, set())) & set(test_ids)
        available = {t: c for t, c in measure_cells.items() if c is not None}
        try:
            aggregated = aggregate(measure, available, excluded)
        except ValueError as e:
            logger.warning(f"No aggregated score for {measure}: {e}")
            aggregated = None
        rows.append(ReportRow(measure, aggregated, measure_cells, excluded))

    rows.sort(key=_sort_key)

    symbol_count = 0
    for i, row in enumerate(rows):
        if row.aggregated is None:
            continue
        for lower in rows[i + 1:]:
            if lower.aggregated is not None and aggregate_diff_significant(row.aggregated,
                                                                          lower.aggregated):
                symbol = difference_symbol(symbol_count)
                symbol_count += 1
                row.column_a = symbol
                lower.column_b.append(symbol)
                break

    logger.info(f"Report '{title}': {len(rows)} measures over {len(test_ids)} tests")
    return CorrelationReport(title=title, test_ids=list(test_ids), rows=rows)
