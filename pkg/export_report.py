"""
Report export for correlation analyses.
Writes ranked reports as CSV (machine) and Markdown (human), the cross-group
summary and the scatter pairs table.
"""

import csv
import logging
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import pandas as pd

from correlation_stats import CorrelationReport, format_percent

logger = logging.getLogger(__name__)

SOFTWARE_VERSION = 'quality-eval 1.0.0'


def _num(value) -> str:
    """Shortest round-trip float text, empty for missing."""
    if value is None:
        return ''
    return repr(float(value))


def _flag(value: bool) -> str:
    return 'true' if value else 'false'


class ReportExporter:
    """Export correlation reports in several formats."""

    def __init__(self, output_dir):
        self.output_dir = Path(output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)

    def header_lines(self, report: CorrelationReport) -> List[str]:
        return [f"report: {report.title}",
                f"alpha: {report.alpha} (two-tailed)",
                f"variance model: {report.variance_model}",
                f"software: {SOFTWARE_VERSION}"]

    def export_csv(self, report: CorrelationReport, stem: str) -> Tuple[Path, Path]:
        """Ranked table plus a long-format cell table, both with '#' header lines."""
        ranking_path = self.output_dir / f"{stem}.csv"
        cells_path = self.output_dir / f"{stem}_cells.csv"

        with open(ranking_path, 'w', newline='', encoding='utf-8') as f:
            for line in self.header_lines(report):
                f.write(f"# {line}\n")
            writer = csv.writer(f, lineterminator='\n')
            writer.writerow(['rank', 'measure', 'rho_bar', 'tau_prime_bar', 'included_tests',
                             'excluded_tests', 'z_variance', 'column_a', 'column_b'])
            for rank, row in enumerate(report.rows, 1):
                agg = row.aggregated
                writer.writerow([
                    rank, row.measure,
                    _num(agg.rho_bar) if agg else '',
                    _num(agg.tau_prime_bar) if agg else '',
                    ';'.join(agg.included_tests) if agg else '',
                    ';'.join(sorted(row.excluded)),
                    _num(agg.z_variance) if agg else '',
                    row.column_a, ','.join(row.column_b),
                ])

        with open(cells_path, 'w', newline='', encoding='utf-8') as f:
            for line in self.header_lines(report):
                f.write(f"# {line}\n")
            writer = csv.writer(f, lineterminator='\n')
            writer.writerow(['measure', 'test_id', 'n', 'rho', 'tau', 'tau_prime',
                             'rho_significant', 'tau_significant', 'excluded', 'degenerate'])
            for row in report.rows:
                for test_id in report.test_ids:
                    cell = row.cells.get(test_id)
                    excluded = _flag(test_id in row.excluded)
                    if cell is None:
                        writer.writerow([row.measure, test_id, '', '', '', '', '', '', excluded, ''])
                        continue
                    writer.writerow([row.measure, test_id, cell.n, _num(cell.rho), _num(cell.tau),
                                     _num(cell.tau_prime), _flag(cell.rho_significant),
                                     _flag(cell.tau_significant), excluded,
                                     _flag(cell.degenerate)])

        logger.info(f"Exported {len(report.rows)} measures to {ranking_path} and {cells_path}")
        return ranking_path, cells_path

    def render_markdown(self, report: CorrelationReport) -> str:
        """Cells show |rho| and |tau'| in percent; * marks significance, † an excluded test."""
        lines = [f"# {report.title}", '']
        lines += [f"- {line}" for line in self.header_lines(report)[1:]]
        lines.append('')

        header = ['Measure'] + [f"{t} (ρ τ′)" for t in report.test_ids] + ['ρ̄', 'τ̄′', 'A', 'B']
        lines.append('| ' + ' | '.join(header) + ' |')
        lines.append('|' + '|'.join(['---'] * len(header)) + '|')
        for row in report.rows:
            agg = row.aggregated
            cells = [row.render_cell(t) for t in report.test_ids]
            summary = ([format_percent(agg.rho_bar), format_percent(agg.tau_prime_bar)]
                       if agg else ['n/a', 'n/a'])
            lines.append('| ' + ' | '.join([row.measure] + cells + summary +
                                           [row.column_a, ','.join(row.column_b)]) + ' |')
        lines.append('')
        return '\n'.join(lines)

    def export_markdown(self, report: CorrelationReport, stem: str) -> Path:
        path = self.output_dir / f"{stem}.md"
        path.write_text(self.render_markdown(report), encoding='utf-8')
        logger.info(f"Exported Markdown report to {path}")
        return path

    def export_summary(self, reports: Dict[Tuple[str, str], CorrelationReport]) -> Tuple[Path, Path]:
        """Aggregated rho_bar / tau'_bar per measure for every (pool, criterion) group."""
        groups = sorted(reports)
        measures = sorted({row.measure for r in reports.values() for row in r.rows})
        csv_path = self.output_dir / 'summary.csv'
        md_path = self.output_dir / 'summary.md'

        def aggregated(group, measure):
            try:
                return reports[group].row(measure).aggregated
            except KeyError:
                return None

        with open(csv_path, 'w', newline='', encoding='utf-8') as f:
            f.write(f"# software: {SOFTWARE_VERSION}\n")
            writer = csv.writer(f, lineterminator='\n')
            writer.writerow(['measure', 'pool', 'criterion', 'rho_bar', 'tau_prime_bar', 'tests'])
            for measure in measures:
                for group in groups:
                    agg = aggregated(group, measure)
                    if agg is None:
                        continue
                    writer.writerow([measure, group[0], group[1], _num(agg.rho_bar),
                                     _num(agg.tau_prime_bar), len(agg.included_tests)])

        header = ['Measure'] + [f"{pool}/{criterion} (ρ̄ τ̄′)" for pool, criterion in groups]
        lines = ['# Summary of aggregated correlations', '', f"- software: {SOFTWARE_VERSION}", '',
                 '| ' + ' | '.join(header) + ' |', '|' + '|'.join(['---'] * len(header)) + '|']
        for measure in measures:
            cells = []
            for group in groups:
                agg = aggregated(group, measure)
                cells.append('n/a' if agg is None else
                             f"{format_percent(agg.rho_bar)} {format_percent(agg.tau_prime_bar)}")
            lines.append('| ' + ' | '.join([measure] + cells) + ' |')
        lines.append('')
        md_path.write_text('\n'.join(lines), encoding='utf-8')

        logger.info(f"Exported summary over {len(groups)} groups to {csv_path}")
        return csv_path, md_path

    def export_pairs(self, pairs: pd.DataFrame) -> Path:
        """Scatter data: one row per valid (item, measure) with its subjective score."""
        path = self.output_dir / 'pairs.csv'
        columns: Sequence[str] = ['test_id', 'item_id', 'condition_id', 'measure',
                                  'score_mean', 'value']
        with open(path, 'w', newline='', encoding='utf-8') as f:
            writer = csv.writer(f, lineterminator='\n')
            writer.writerow(columns)
            for row in pairs[list(columns)].itertuples(index=False):
                writer.writerow([row.test_id, row.item_id, row.condition_id, row.measure,
                                 _num(row.score_mean), _num(row.value)])
        logger.info(f"Exported {len(pairs)} scatter pairs to {path}")
        return path
