#!/usr/bin/env python3
"""
End-to-end tests: manifests, results files, the measure/decompose/correlate
commands and the golden synthetic corpus.
"""

import json
import math
import sys
import tempfile
from pathlib import Path

import numpy as np
import pandas as pd

from audio_signal import AudioSignal, load_wav, save_wav
from correlation_stats import pearson
from make_synthetic_corpus import MEASURES, make_corpus
from manifest import ManifestError, import_csv, load_manifest, parse_manifest, serialize_manifest
from quality_eval import EXIT_OK, EXIT_PARTIAL, EXIT_USAGE, main
from quality_models import ItemKey, MeasureResult
from results_store import ResultsStore, load_results, valid_values
from testing_utils import mock_tool_command, run_tests, speech_like, write_script

FAILING_TOOL = """\
import sys
sys.stderr.write("no license\\n")
sys.exit(1)
"""


def _run(tmp, *args) -> int:
    return main(['--log-file', str(Path(tmp) / 'run.log')] + [str(a) for a in args])


def _manifest_json(tests) -> str:
    """tests: list of (test_id, scores, extra test fields); paths are placeholders."""
    body = []
    for test_id, scores, extra in tests:
        items = [{'item_id': f"item{i}", 'condition_id': 'sys', 'test_path': f"{test_id}_{i}.wav",
                  'ref_target_path': 'ref.wav', 'score_mean': s} for i, s in enumerate(scores)]
        body.append(dict({'test_id': test_id, 'items': items}, **extra))
    return json.dumps({'tests': body}, indent=2)


def _write_results(path, rows):
    """rows: (test_id, item_id, measure, value or None)"""
    store = ResultsStore()
    for test_id, item_id, measure, value in rows:
        result = (MeasureResult(measure, float(value), True) if value is not None
                  else MeasureResult.failure(measure, 'tool crashed'))
        store.add_result(ItemKey(test_id, item_id, 'sys'), result)
    store.save(path)


def _ranking(out_dir, stem='report_default_baq') -> pd.DataFrame:
    return pd.read_csv(Path(out_dir) / f"{stem}.csv", comment='#', keep_default_na=False)


def test_manifest_round_trip():
    print("\nTesting manifest parse/serialize...")
    with tempfile.TemporaryDirectory() as tmp:
        text = json.dumps({'tests': [{
            'test_id': 'mushra1', 'pool': 'speech', 'criterion': 'baq',
            'exclusions': {'sdr': True, 'sir': False}, 'notes': 'lab A',
            'items': [
                {'item_id': 'a', 'condition_id': 'c1', 'test_path': 'a.wav',
                 'ref_target_path': 'ref.wav', 'other_ref_paths': ['n.wav'],
                 'score_mean': 71.5, 'n_ratings': 12},
                {'item_id': 'a', 'condition_id': 'hidden', 'test_path': 'ref.wav',
                 'ref_target_path': 'ref.wav', 'score_mean': 100, 'role': 'reference'},
                {'item_id': 'a', 'condition_id': 'lp35', 'test_path': 'lp.wav',
                 'ref_target_path': 'ref.wav', 'score_mean': 20, 'role': 'anchor'},
            ]}]}, indent=2)
        dataset = parse_manifest(text, Path(tmp), check_paths=False)
        test = dataset.tests[0]
        assert len(test.items) == 1 and test.exclusions == {'sdr'}
        item = test.items[0]
        assert item.test_path == str((Path(tmp) / 'a.wav').resolve())
        assert item.other_ref_paths == (str((Path(tmp) / 'n.wav').resolve()),)
        assert dataset.groups() == [('speech', 'baq')]
        assert dataset.exclusions_by_measure() == {'sdr': {'mushra1'}}

        again = parse_manifest(serialize_manifest(dataset), Path('/elsewhere'), check_paths=False)
        assert again.tests == dataset.tests
    print("✓ Anchors and hidden references dropped; serialization is lossless")


def test_manifest_errors():
    print("\nTesting manifest errors...")
    with tempfile.TemporaryDirectory() as tmp:
        (Path(tmp) / 'x.wav').write_bytes(b'')
        base = {'condition_id': 'c', 'test_path': 'x.wav', 'ref_target_path': 'x.wav'}
        cases = {
            'score': [dict(base, item_id='i0', score_mean=50), dict(base, item_id='i1', score_mean=150)],
            'duplicate': [dict(base, item_id='i0', score_mean=50), dict(base, item_id='i0', score_mean=60)],
            'missing_file': [dict(base, item_id='i0', score_mean=50, test_path='absent.wav')],
            'ratings': [dict(base, item_id='i0', score_mean=50, n_ratings=0)],
            'field': [{'item_id': 'i0', 'condition_id': 'c', 'test_path': 'x.wav', 'score_mean': 1}],
        }
        for name, items in cases.items():
            path = Path(tmp) / f"{name}.json"
            path.write_text(json.dumps({'tests': [{'test_id': 't', 'items': items}]}, indent=2),
                            encoding='utf-8')
            try:
                load_manifest(path)
                raise AssertionError(f"{name} accepted")
            except ManifestError as e:
                assert str(e).startswith(str(path)), str(e)
                if name == 'score':
                    lines = path.read_text().splitlines()
                    assert e.line is not None and '"i1"' in lines[e.line - 1]
                    assert 'outside [0, 100]' in str(e)
                if name == 'missing_file':
                    assert 'file not found' in str(e)

        broken = Path(tmp) / 'broken.json'
        broken.write_text('{\n  "tests": [\n}\n', encoding='utf-8')
        try:
            load_manifest(broken)
            raise AssertionError("broken JSON accepted")
        except ManifestError as e:
            assert e.line == 3

        twice = Path(tmp) / 'twice.json'
        twice.write_text(json.dumps({'tests': [{'test_id': 't', 'items': []},
                                               {'test_id': 't', 'items': []}]}), encoding='utf-8')
        try:
            load_manifest(twice)
            raise AssertionError("duplicate test accepted")
        except ManifestError:
            pass
        try:
            load_manifest(Path(tmp) / 'absent.json')
            raise AssertionError("absent manifest accepted")
        except FileNotFoundError:
            pass
    print("✓ Schema violations reported with file and line")


def test_csv_import():
    print("\nTesting CSV manifest import...")
    with tempfile.TemporaryDirectory() as tmp:
        csv_path = Path(tmp) / 'items.csv'
        csv_path.write_text(
            "test_id,item_id,condition_id,test_path,ref_target_path,other_ref_paths,score_mean,"
            "n_ratings,pool,criterion,exclusions,role\n"
            "t1,a,c1,a.wav,ref.wav,n1.wav;n2.wav,61.5,10,speech,baq,sdr;sir,\n"
            "t1,a,anchor,lp.wav,ref.wav,,12,,,,,anchor\n"
            "t2,b,c1,b.wav,ref.wav,,40,,music,baq,,\n", encoding='utf-8')
        dataset = import_csv(csv_path, check_paths=False)
        assert [t.test_id for t in dataset.tests] == ['t1', 't2']
        t1, t2 = dataset.tests
        assert t1.pool == 'speech' and t1.exclusions == {'sdr', 'sir'}
        assert len(t1.items) == 1 and t1.items[0].n_ratings == 10
        assert len(t1.items[0].other_ref_paths) == 2
        assert t2.items[0].score_mean == 40.0

        json_again = parse_manifest(serialize_manifest(dataset), Path(tmp), check_paths=False)
        assert json_again.tests == dataset.tests

        bad = Path(tmp) / 'bad.csv'
        bad.write_text("test_id,item_id,condition_id,test_path,ref_target_path,score_mean\n"
                       "t1,a,c1,a.wav,ref.wav,50\n"
                       "t1,b,c1,b.wav,ref.wav,-5\n", encoding='utf-8')
        try:
            import_csv(bad, check_paths=False)
            raise AssertionError("negative score accepted")
        except ManifestError as e:
            assert e.line == 3
    print("✓ CSV rows become the same dataset as JSON")


def test_results_store():
    print("\nTesting results files...")
    with tempfile.TemporaryDirectory() as tmp:
        rows = [('t1', 'item1', 'sdr', 4.5), ('t1', 'item0', 'sdr', 1.25),
                ('t1', 'item0', 'fwsnrseg', None), ('t0', 'item9', 'sdr', 0.1)]
        _write_results(Path(tmp) / 'a.csv', rows)
        _write_results(Path(tmp) / 'b.csv', list(reversed(rows)))
        assert (Path(tmp) / 'a.csv').read_bytes() == (Path(tmp) / 'b.csv').read_bytes()

        results = load_results([Path(tmp) / 'a.csv'])
        assert list(results['test_id']) == ['t0', 't1', 't1', 't1']
        failed = results[results['measure'] == 'fwsnrseg'].iloc[0]
        assert not failed['valid'] and failed['note'] == 'tool crashed'
        sdr = valid_values(results, 'sdr')
        assert sdr[('t1', 'item0', 'sys')] == 1.25

        override = Path(tmp) / 'override.csv'
        override.write_text("test_id,item_id,condition_id,measure,value\n"
                            "t1,item0,sys,sdr,9.5\nt1,item1,sys,sdr,\n", encoding='utf-8')
        merged = load_results([Path(tmp) / 'a.csv', override])
        sdr = merged[merged['measure'] == 'sdr'].set_index('item_id')
        assert sdr.loc['item0', 'value'] == 9.5 and sdr.loc['item0', 'valid']
        assert not sdr.loc['item1', 'valid']
        try:
            load_results([Path(tmp) / 'absent.csv'])
            raise AssertionError("absent results accepted")
        except FileNotFoundError:
            pass
    print("✓ Sorted output, later files win, valid rows need a value")


def test_csv_manifest_through_cli():
    print("\nTesting measure and correlate with a CSV manifest...")
    rng = np.random.default_rng(3)
    with tempfile.TemporaryDirectory() as tmp:
        tmp_path = Path(tmp)
        ref = speech_like(rng, 8000)
        save_wav(AudioSignal(ref, 16000), tmp_path / 'ref.wav')
        rows = ["test_id,item_id,condition_id,test_path,ref_target_path,score_mean,pool,criterion,role"]
        for i in range(4):
            noisy = ref + 0.02 * (i + 1) * rng.standard_normal(len(ref))
            save_wav(AudioSignal(noisy, 16000), tmp_path / f"t{i}.wav")
            rows.append(f"t,i{i},c,t{i}.wav,ref.wav,{80 - 15 * i},speech,baq,")
        rows.append("t,i0,lp35,t3.wav,ref.wav,5,speech,baq,anchor")
        manifest_csv = tmp_path / 'items.csv'
        manifest_csv.write_text('\n'.join(rows) + '\n', encoding='utf-8')
        (tmp_path / 'run.json').write_text(json.dumps({'measures': ['fwsnrseg', 'si_sdr']}),
                                           encoding='utf-8')

        out = tmp_path / 'results.csv'
        assert _run(tmp, 'measure', '--manifest', manifest_csv, '--config', tmp_path / 'run.json',
                    '--out', out) == EXIT_OK
        results = load_results([out])
        assert len(results) == 8 and results['valid'].all()
        assert 'lp35' not in set(results['condition_id'])

        reports = tmp_path / 'reports'
        assert _run(tmp, 'correlate', '--results', out, '--manifest', manifest_csv,
                    '--out', reports) == EXIT_OK
        ranking = _ranking(reports, 'report_speech_baq')
        assert set(ranking['measure']) == {'fwsnrseg', 'si_sdr'}

        broken = tmp_path / 'broken.csv'
        broken.write_text("test_id,item_id\nt,i0\n", encoding='utf-8')
        assert _run(tmp, 'correlate', '--results', out, '--manifest', broken,
                    '--out', reports) == EXIT_USAGE
    print("✓ CSV manifests drive both commands; anchors screened")


def test_measure_command_with_failing_adapter():
    print("\nTesting measure with a failing adapter...")
    rng = np.random.default_rng(1)
    with tempfile.TemporaryDirectory() as tmp:
        tmp_path = Path(tmp)
        ref = speech_like(rng, 8000)
        save_wav(AudioSignal(ref, 16000), tmp_path / 'ref.wav')
        for i in range(2):
            save_wav(AudioSignal(ref + 0.05 * (i + 1) * rng.standard_normal(8000), 16000),
                     tmp_path / f"t{i}.wav")
        (tmp_path / 'manifest.json').write_text(json.dumps({'tests': [{'test_id': 't', 'items': [
            {'item_id': f"i{i}", 'condition_id': 'c', 'test_path': f"t{i}.wav",
             'ref_target_path': 'ref.wav', 'score_mean': 50 + i} for i in range(2)]}]}),
            encoding='utf-8')
        executable, args = mock_tool_command(write_script(tmp, 'fail.py', FAILING_TOOL))
        (tmp_path / 'run.json').write_text(json.dumps({
            'measures': ['fwsnrseg', {'name': 'si_sdr'}, 'broken_tool'],
            'adapters': [{'name': 'broken_tool', 'executable': executable, 'args': args,
                          'pattern': 'MOS=(\\S+)'}],
        }), encoding='utf-8')

        out = tmp_path / 'results.csv'
        code = _run(tmp, 'measure', '--manifest', tmp_path / 'manifest.json',
                    '--config', tmp_path / 'run.json', '--out', out)
        assert code == EXIT_PARTIAL
        results = load_results([out])
        assert len(results) == 6
        broken = results[results['measure'] == 'broken_tool']
        assert not broken['valid'].any()
        assert broken['note'].str.contains('exit status 1').all()
        assert results[results['measure'] != 'broken_tool']['valid'].all()
        assert 'broken_tool' in (tmp_path / 'run.log').read_text()
    print("✓ Adapter failures are recorded, other measures unaffected, exit status 2")


def test_correlate_fixture():
    print("\nTesting correlate on a hand-made fixture...")
    scores = {'t1': [10, 30, 50, 70, 90], 't2': [20, 25, 60, 65, 80], 't3': [5, 50, 40, 90, 60]}
    values = {'t1': [1.0, 2.0, 3.0, 5.0, 4.0], 't2': [0.5, 0.7, 0.6, 0.9, 1.0],
              't3': [3.0, 1.0, 2.0, 0.0, 5.0]}
    with tempfile.TemporaryDirectory() as tmp:
        tmp_path = Path(tmp)
        (tmp_path / 'manifest.json').write_text(_manifest_json([
            ('t1', scores['t1'], {}), ('t2', scores['t2'], {}),
            ('t3', scores['t3'], {'exclusions': ['m']})]), encoding='utf-8')
        rows = []
        for test_id in scores:
            for i, v in enumerate(values[test_id]):
                rows.append((test_id, f"item{i}", 'm', v))
                rows.append((test_id, f"item{i}", 'eta', float(i)))
                rows.append((test_id, f"item{i}", 'zeta', float(i)))
        _write_results(tmp_path / 'results.csv', rows)

        out = tmp_path / 'reports'
        code = _run(tmp, 'correlate', '--results', tmp_path / 'results.csv',
                    '--manifest', tmp_path / 'manifest.json', '--out', out)
        assert code == EXIT_OK

        ranking = _ranking(out)
        m = ranking[ranking['measure'] == 'm'].iloc[0]
        z = [math.atanh(abs(pearson(scores[t], values[t]))) for t in ('t1', 't2')]
        assert abs(float(m['rho_bar']) - math.tanh(sum(z) / 2)) < 1e-12
        assert m['excluded_tests'] == 't3' and m['included_tests'] == 't1;t2'
        order = list(ranking['measure'])
        assert order.index('eta') + 1 == order.index('zeta')

        markdown = (out / 'report_default_baq.md').read_text(encoding='utf-8')
        m_line = next(line for line in markdown.splitlines() if line.startswith('| m |'))
        assert m_line.count('†') == 1
        eta_line = next(line for line in markdown.splitlines() if line.startswith('| eta |'))
        assert eta_line.split(' | ')[1] == '100* 100*'
        for name in ('report_default_baq_cells.csv', 'summary.csv', 'summary.md', 'pairs.csv'):
            assert (out / name).exists(), name
    print("✓ Exclusions, ties and rendering match hand computation")


def test_correlate_partial_and_usage():
    print("\nTesting correlate with gaps and bad input...")
    with tempfile.TemporaryDirectory() as tmp:
        tmp_path = Path(tmp)
        (tmp_path / 'manifest.json').write_text(_manifest_json([
            ('t1', [10, 20, 30, 40], {}), ('t2', [10, 20, 30, 40], {})]), encoding='utf-8')
        rows = [('t1', f"item{i}", 'm', float(i)) for i in range(4)]
        rows += [('t2', 'item0', 'm', 1.0), ('t2', 'item1', 'm', 2.0),
                 ('t2', 'item2', 'm', None), ('t2', 'item3', 'm', None)]
        _write_results(tmp_path / 'results.csv', rows)
        out = tmp_path / 'reports'
        code = _run(tmp, 'correlate', '--results', tmp_path / 'results.csv',
                    '--manifest', tmp_path / 'manifest.json', '--out', out)
        assert code == EXIT_PARTIAL
        markdown = (out / 'report_default_baq.md').read_text(encoding='utf-8')
        assert 'n/a' in markdown

        assert _run(tmp) == EXIT_USAGE
        assert _run(tmp, 'correlate', '--results', tmp_path / 'absent.csv',
                    '--manifest', tmp_path / 'manifest.json', '--out', out) == EXIT_USAGE
        try:
            _run(tmp, 'measure', '--manifest', tmp_path / 'manifest.json')
            raise AssertionError("missing --config accepted")
        except SystemExit as e:
            assert e.code == EXIT_USAGE
    print("✓ n/a cells give exit status 2; usage errors exit 1")


def test_decompose_command():
    print("\nTesting decompose...")
    rng = np.random.default_rng(2)
    fs, n = 16000, 160000
    with tempfile.TemporaryDirectory() as tmp:
        tmp_path = Path(tmp)
        target = np.vstack([speech_like(rng, n), speech_like(rng, n)])
        other = 0.1 * rng.standard_normal((2, n))
        filtered = np.vstack([np.convolve(target[ch], [0.9, 0.2])[:n] for ch in range(2)])
        noise = 0.01 * rng.standard_normal((2, n))
        y = filtered + other + noise
        for name, data in (('target', target), ('other', other), ('y', y)):
            save_wav(AudioSignal(data, fs), tmp_path / f"{name}.wav")

        out = tmp_path / 'si'
        code = _run(tmp, 'decompose', '--test', tmp_path / 'target.wav',
                    '--target', tmp_path / 'target.wav', '--mode', 'si', '--outdir', out)
        assert code == EXIT_OK
        ratios = json.loads((out / 'ratios.json').read_text())
        assert ratios['sdr'] == 30.0 and ratios['sir'] == 30.0 and ratios['sar'] == 30.0
        assert ratios['taps'] is None
        assert np.all(load_wav(out / 'e_interf.wav').samples == 0)
        assert np.all(load_wav(out / 'e_artif.wav').samples == 0)

        out = tmp_path / 'fir'
        code = _run(tmp, 'decompose', '--test', tmp_path / 'y.wav', '--target', tmp_path / 'target.wav',
                    '--other', tmp_path / 'other.wav', '--mode', 'fir', '--taps', 512, '--outdir', out)
        assert code == EXIT_OK
        parts = [load_wav(out / f"{name}.wav") for name in ('s_target', 'e_interf', 'e_artif')]
        assert all(p.length == n and p.channel_count == 2 for p in parts)
        total = parts[0].samples + parts[1].samples + parts[2].samples
        assert np.max(np.abs(total - load_wav(tmp_path / 'y.wav').samples)) < 1e-6
        ratios = json.loads((out / 'ratios.json').read_text())
        assert ratios['taps'] == 512
        energy = lambda x: float(np.sum(x ** 2))
        expected = {
            'sdr': 10 * math.log10(energy(filtered) / (energy(other) + energy(noise))),
            'sir': 10 * math.log10(energy(filtered) / energy(other)),
            'sar': 10 * math.log10((energy(filtered) + energy(other)) / energy(noise)),
        }
        for key, value in expected.items():
            assert abs(ratios[key] - value) < 0.25, (key, ratios[key], value)

        code = _run(tmp, 'decompose', '--test', tmp_path / 'y.wav', '--target', tmp_path / 'target.wav',
                    '--other', tmp_path / 'other.wav', '--mode', 'fir', '--max-basis-dim', 100,
                    '--outdir', tmp_path / 'capped')
        assert code == EXIT_USAGE
    print("✓ Components written, reconstruct y, ratios exported")


def test_golden_corpus():
    """Noise-ordered corpus: every non-constant measure ranks items perfectly."""
    print("\nTesting the golden synthetic corpus...")
    with tempfile.TemporaryDirectory() as tmp:
        tmp_path = Path(tmp)
        manifest, config = make_corpus(tmp_path / 'corpus')

        serial, parallel = tmp_path / 'serial.csv', tmp_path / 'parallel.csv'
        assert _run(tmp, 'measure', '--manifest', manifest, '--config', config,
                    '--out', serial, '--jobs', 1) == EXIT_OK
        assert _run(tmp, 'measure', '--manifest', manifest, '--config', config,
                    '--out', parallel, '--jobs', 8) == EXIT_OK
        assert serial.read_bytes() == parallel.read_bytes()

        results = load_results([serial])
        assert len(results) == 12 * len(MEASURES) and results['valid'].all()

        first, second = tmp_path / 'reports1', tmp_path / 'reports2'
        for out in (first, second):
            assert _run(tmp, 'correlate', '--results', serial, '--manifest', manifest,
                        '--out', out) == EXIT_OK
        for name in ('report_synthetic_baq.csv', 'report_synthetic_baq_cells.csv',
                     'report_synthetic_baq.md', 'summary.csv', 'summary.md', 'pairs.csv'):
            assert (first / name).read_bytes() == (second / name).read_bytes(), name

        cells = pd.read_csv(first / 'report_synthetic_baq_cells.csv', comment='#',
                            keep_default_na=False).set_index('measure')
        for measure in MEASURES:
            cell = cells.loc[measure]
            degenerate = str(cell['degenerate']).lower() == 'true'
            if measure in ('sir', 'si_sir'):
                assert degenerate, measure
                continue
            assert not degenerate, measure
            assert abs(abs(float(cell['tau_prime'])) - 1.0) < 1e-12, (measure, cell['tau_prime'])
            assert int(cell['n']) == 12

        ranking = _ranking(first, 'report_synthetic_baq')
        assert list(ranking['measure'])[-2:] == ['si_sir', 'sir']
        assert set(ranking['measure']) == set(MEASURES)
    print("✓ Deterministic across workers and runs; tau' = 1 for every ordered measure")


def run_all_tests():
    tests = [
        ("Manifest round trip", test_manifest_round_trip),
        ("Manifest errors", test_manifest_errors),
        ("CSV import", test_csv_import),
        ("Results store", test_results_store),
        ("Measure with failing adapter", test_measure_command_with_failing_adapter),
        ("CSV manifest through the CLI", test_csv_manifest_through_cli),
        ("Correlate fixture", test_correlate_fixture),
        ("Correlate gaps and usage", test_correlate_partial_and_usage),
        ("Decompose", test_decompose_command),
        ("Golden corpus", test_golden_corpus),
    ]
    return run_tests("QUALITY EVAL END-TO-END TEST SUITE", tests)


if __name__ == '__main__':
    sys.exit(run_all_tests())
