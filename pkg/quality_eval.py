#!/usr/bin/env python3
"""
Batch front end for audio quality evaluation.
Runs measures over manifest items, exports decompositions and builds
correlation reports against subjective scores.
"""

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import pandas as pd

from audio_signal import AudioSignal, load_wav, resample, save_wav
from bss_decomposition import decompose_bsseval, decompose_si, ratios
from correlation_stats import MIN_PAIRS, PairedScores, build_report, compute_cell
from export_report import ReportExporter
from external_adapter import AdapterMovSource, ExternalToolMeasure, set_subprocess_limit
from manifest import Dataset, Manifest, ManifestError, ManifestItem, load_manifest
from quality_models import (BssRatioMeasure, DllrMeasure, FwSnrSegMeasure, ItemKey, Measure,
                            MeasureRegistry, MeasureResult, MovSource, SaMeasure,
                            SidecarMovSource, SourceSet, TwoFParams, create_registry, evaluate)
from results_store import KEY_COLUMNS, ResultsStore, load_results
from run_config import AdapterConfig, MeasureSpec, RunConfig, load_run_config
from speech_measures import DllrParams, FwSnrSegParams

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_PARTIAL = 2

DEFAULT_LOG_FILE = 'quality_eval.log'


def setup_logging(log_file: str = DEFAULT_LOG_FILE, verbose: bool = False):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format='%(asctime)s - %(levelname)s - %(message)s',
        handlers=[
            logging.FileHandler(log_file),
            logging.StreamHandler()
        ],
        force=True
    )


def _mov_source(sidecar: Optional[str], adapter: Optional[AdapterConfig]) -> Optional[MovSource]:
    if sidecar:
        return SidecarMovSource(sidecar)
    if adapter is not None:
        return AdapterMovSource(adapter)
    return None


def build_registry(config: RunConfig) -> MeasureRegistry:
    """Built-in measures with the config's BSS settings, the 2f backend and all adapters."""
    two_f_params = mov_source = sa_mov_source = None
    if config.two_f is not None:
        two_f_params = TwoFParams.load(config.two_f.params_file)
        mov_source = _mov_source(config.two_f.mov_sidecar, config.two_f.mov_adapter)
        sa_mov_source = _mov_source(config.two_f.sa_mov_sidecar, config.two_f.mov_adapter)

    registry = create_registry(filter_len=config.filter_len,
                               max_basis_dim=config.max_basis_dim,
                               two_f_params=two_f_params,
                               mov_source=mov_source,
                               sa_mov_source=sa_mov_source)
    for adapter in config.adapters:
        registry.register(ExternalToolMeasure(adapter))
    return registry


def _params(cls, params: Dict):
    return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in params.items()})


def configured_measure(spec: MeasureSpec, registry: MeasureRegistry, config: RunConfig) -> Measure:
    """The registry's measure, rebuilt when the spec carries parameter overrides."""
    measure = registry.get(spec.name)
    if not spec.params:
        return measure

    name = spec.name
    base_name = name[3:] if name.startswith('sa_') else name
    try:
        if base_name == 'fwsnrseg':
            base = FwSnrSegMeasure(_params(FwSnrSegParams, spec.params))
        elif base_name == 'dllr':
            base = DllrMeasure(_params(DllrParams, spec.params))
        elif isinstance(measure, BssRatioMeasure):
            return BssRatioMeasure(measure.ratio, measure.scale_invariant,
                                   spec.params.get('filter_len', config.filter_len),
                                   spec.params.get('max_basis_dim', config.max_basis_dim))
        else:
            raise ValueError(f"Measure {name} takes no parameters")
    except TypeError as e:
        raise ValueError(f"Bad parameters for {name}: {e}") from e
    return SaMeasure(base) if name.startswith('sa_') else base


def select_measures(config: RunConfig, registry: MeasureRegistry) -> List[Measure]:
    if not config.measures:
        return [registry.get(name) for name in registry.names()]
    return [configured_measure(spec, registry, config) for spec in config.measures]


def load_item_signals(item: ManifestItem, target_rate: int) -> Tuple[AudioSignal, AudioSignal, SourceSet]:
    """Test signal, target reference and source set, all at the target rate."""
    test = resample(load_wav(item.test_path), target_rate)
    target = resample(load_wav(item.ref_target_path), target_rate)
    others = tuple(resample(load_wav(p), target_rate) for p in item.other_ref_paths)
    return target, test, SourceSet(target, others)


def measure_item(test: Manifest, item: ManifestItem, measures: Sequence[Measure],
                 target_rate: int) -> List[Tuple[ItemKey, MeasureResult]]:
    key = ItemKey(test.test_id, item.item_id, item.condition_id)
    try:
        reference, test_signal, sources = load_item_signals(item, target_rate)
    except Exception as e:
        logger.error(f"✗ Cannot load {'/'.join(key)}: {e}")
        return [(key, MeasureResult.failure(m.name, f"load failed: {e}")) for m in measures]

    results = [(key, evaluate(m, reference, test_signal, sources, key)) for m in measures]
    valid = sum(1 for _, r in results if r.valid)
    logger.info(f"✓ {'/'.join(key)}: {valid}/{len(results)} measures valid")
    return results


def cmd_measure(manifest_path: str, config_path: str, out_path: Optional[str],
                jobs: Optional[int] = None) -> int:
    """Evaluate every configured measure on every manifest item and write the results CSV."""
    config = load_run_config(config_path)
    dataset = load_manifest(manifest_path)
    out_path = out_path or config.results_path
    if not out_path:
        raise ValueError("No output path: pass --out or set results_path in the config")

    set_subprocess_limit(config.subprocess_limit)
    registry = build_registry(config)
    measures = select_measures(config, registry)
    parallelism = jobs or config.parallelism
    jobs_list = list(dataset.items())

    logger.info(f"Measuring {len(jobs_list)} items x {len(measures)} measures "
                f"({parallelism} workers)...")
    start_time = datetime.now()

    if parallelism > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            outputs = list(pool.map(lambda job: measure_item(job[0], job[1], measures,
                                                             config.target_rate), jobs_list))
    else:
        outputs = [measure_item(test, item, measures, config.target_rate) for test, item in jobs_list]

    store = ResultsStore()
    for item_results in outputs:
        for key, result in item_results:
            store.add_result(key, result)
    store.save(out_path)

    duration = (datetime.now() - start_time).total_seconds()
    logger.info("=" * 60)
    logger.info(f"Measurement completed in {duration:.1f} seconds")
    logger.info(f"Valid: {store.valid_count}/{len(store)}")
    logger.info(f"Invalid: {store.invalid_count}/{len(store)}")
    logger.info("=" * 60)
    return EXIT_PARTIAL if store.invalid_count else EXIT_OK


def cmd_decompose(test_path: str, target_path: str, other_paths: Sequence[str], mode: str,
                  taps: int, outdir: str, max_basis_dim: int = 8192) -> int:
    """Write s_target, e_interf and e_artif as float WAVs and print the ratios as JSON."""
    y = load_wav(test_path)
    target = load_wav(target_path)
    others = [load_wav(p) for p in other_paths]

    if mode == 'fir':
        dec = decompose_bsseval(y, target, others, taps, max_basis_dim)
    else:
        dec = decompose_si(y, target, others)
    result = ratios(dec)
    exported = dec.trimmed(y.length)

    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    save_wav(exported.s_target, outdir / 's_target.wav', 'FLOAT')
    save_wav(exported.e_interf, outdir / 'e_interf.wav', 'FLOAT')
    save_wav(exported.e_artif, outdir / 'e_artif.wav', 'FLOAT')

    payload = dict(mode=mode, taps=taps if mode == 'fir' else None, **result.to_dict())
    text = json.dumps(payload, indent=2)
    (outdir / 'ratios.json').write_text(text + '\n', encoding='utf-8')
    print(text)
    logger.info(f"Decomposition written to {outdir}: SDR {result.sdr:.2f} dB, "
                f"SIR {result.sir:.2f} dB, SAR {result.sar:.2f} dB")
    return EXIT_OK


def build_pairs(dataset: Dataset, results: pd.DataFrame) -> pd.DataFrame:
    """Valid results joined with the manifest's subjective means."""
    scores = pd.DataFrame([{'test_id': t.test_id, 'item_id': i.item_id,
                            'condition_id': i.condition_id, 'score_mean': i.score_mean}
                           for t, i in dataset.items()],
                          columns=['test_id', 'item_id', 'condition_id', 'score_mean'])
    valid = results[results['valid']]
    pairs = valid.merge(scores, on=['test_id', 'item_id', 'condition_id'], how='inner')
    unmatched = len(valid) - len(pairs)
    if unmatched:
        logger.warning(f"{unmatched} valid results have no manifest item and are ignored")
    return pairs.sort_values(KEY_COLUMNS, kind='mergesort').reset_index(drop=True)


def cmd_correlate(results_paths: Sequence[str], manifest_path: str, out_dir: str) -> int:
    """Per-group ranked reports, the cross-group summary and the scatter pairs."""
    dataset = load_manifest(manifest_path, check_paths=False)
    results = load_results(results_paths)
    invalid = int((~results['valid']).sum())
    if invalid:
        logger.info(f"Dropping {invalid} invalid results pairwise per measure")

    pairs = build_pairs(dataset, results)
    if pairs.empty:
        raise ValueError("No valid results match the manifest")
    measures = sorted(pairs['measure'].unique())

    exporter = ReportExporter(out_dir)
    exporter.export_pairs(pairs)

    reports = {}
    missing_cells = 0
    for pool, criterion in dataset.groups():
        tests = dataset.tests_in_group(pool, criterion)
        cells: Dict[str, Dict] = {}
        for measure in measures:
            measure_pairs = pairs[pairs['measure'] == measure]
            cells[measure] = {}
            for test in tests:
                sub = measure_pairs[measure_pairs['test_id'] == test.test_id]
                if len(sub) < MIN_PAIRS:
                    logger.warning(f"{measure} on {test.test_id}: {len(sub)} valid pairs, cell is n/a")
                    cells[measure][test.test_id] = None
                    missing_cells += 1
                    continue
                paired = PairedScores(test.test_id, tuple(sub['score_mean']), tuple(sub['value']))
                cells[measure][test.test_id] = compute_cell(measure, paired)

        report = build_report(f"{pool} / {criterion}", [t.test_id for t in tests], cells,
                              dataset.exclusions_by_measure(tests))
        stem = f"report_{pool}_{criterion}"
        exporter.export_csv(report, stem)
        exporter.export_markdown(report, stem)
        reports[(pool, criterion)] = report

    exporter.export_summary(reports)
    logger.info("=" * 60)
    logger.info(f"Correlation reports for {len(reports)} groups written to {out_dir}")
    logger.info(f"Measures: {len(measures)}, n/a cells: {missing_cells}")
    logger.info("=" * 60)
    return EXIT_PARTIAL if (invalid or missing_cells) else EXIT_OK


class _ArgumentParser(argparse.ArgumentParser):
    """Usage errors exit with status 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main entry point with command-line interface."""
    parser = _ArgumentParser(
        description='Audio quality measures and correlation analysis',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Run all configured measures over a manifest
  python quality_eval.py measure --manifest tests.json --config run.json --out results.csv

  # Export a 512-tap decomposition
  python quality_eval.py decompose --test y.wav --target s.wav --other n.wav --mode fir --outdir dec/

  # Correlate native and injected results with the subjective scores
  python quality_eval.py correlate --results results.csv --results polqa.csv --manifest tests.json --out reports/
        """
    )
    parser.add_argument('--log-file', default=DEFAULT_LOG_FILE,
                        help=f'Log file (default: {DEFAULT_LOG_FILE})')
    parser.add_argument('--verbose', '-v', action='store_true',
                        help='Enable verbose logging')
    sub = parser.add_subparsers(dest='command')

    measure = sub.add_parser('measure', help='Evaluate measures over a manifest')
    measure.add_argument('--manifest', required=True, help='Manifest (JSON, or CSV with one row per item)')
    measure.add_argument('--config', required=True, help='Run config JSON')
    measure.add_argument('--out', help='Results CSV (default: results_path from the config)')
    measure.add_argument('--jobs', type=int, help='Worker threads (overrides config parallelism)')

    decompose = sub.add_parser('decompose', help='Export a signal decomposition')
    decompose.add_argument('--test', required=True, help='Signal under test')
    decompose.add_argument('--target', required=True, help='Target reference')
    decompose.add_argument('--other', action='append', default=[], help='Interfering reference (repeatable)')
    decompose.add_argument('--mode', choices=['fir', 'si'], required=True)
    decompose.add_argument('--taps', type=int, default=512, help='FIR length (default: 512)')
    decompose.add_argument('--max-basis-dim', type=int, default=8192,
                           help='Largest projection basis (default: 8192)')
    decompose.add_argument('--outdir', required=True, help='Output directory')

    correlate = sub.add_parser('correlate', help='Correlate results with subjective scores')
    correlate.add_argument('--results', action='append', required=True,
                           help='Results CSV (repeatable)')
    correlate.add_argument('--manifest', required=True, help='Manifest (JSON, or CSV with one row per item)')
    correlate.add_argument('--out', required=True, help='Report directory')

    args = parser.parse_args(argv)
    setup_logging(args.log_file, args.verbose)

    if args.command is None:
        parser.print_help()
        return EXIT_USAGE

    try:
        if args.command == 'measure':
            return cmd_measure(args.manifest, args.config, args.out, args.jobs)
        if args.command == 'decompose':
            return cmd_decompose(args.test, args.target, args.other, args.mode, args.taps,
                                 args.outdir, args.max_basis_dim)
        return cmd_correlate(args.results, args.manifest, args.out)
    except (ManifestError, ValueError, FileNotFoundError) as e:
        logger.error(f"✗ {e}")
        return EXIT_USAGE


if __name__ == '__main__':
    sys.exit(main())
