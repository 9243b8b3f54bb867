#!/usr/bin/env python3
"""
Synthetic golden corpus: one reference, 3 systems x 4 items with strictly
increasing noise, subjective scores in the same order, MOV sidecars and a run config.
"""

import argparse
import csv
import json
import logging
from pathlib import Path
from typing import Tuple

import numpy as np
from scipy.signal import lfilter

from audio_signal import AudioSignal, save_wav
from manifest import Dataset, Manifest, ManifestItem, save_manifest

logger = logging.getLogger(__name__)

SAMPLE_RATE = 48000
DURATION_S = 0.5
SYSTEMS = 3
ITEMS_PER_SYSTEM = 4
TEST_ID = 'synthetic'

# degradation step k = 0..11
FIRST_SNR_DB = 27.0
SNR_STEP_DB = 2.5
FIRST_SCORE = 90.0
SCORE_STEP = 7.0

TWO_F_PARAMS = """\
# affine 2f mapping used by the synthetic corpus
mapping = affine
intercept = 100
adb = -10
avg_mod_diff_1 = -1
"""

MEASURES = ['fwsnrseg', 'dllr', 'sdr', 'sir', 'sar', 'si_sdr', 'si_sir', 'si_sar',
            'sa_fwsnrseg', 'sa_dllr', 'adb', 'avg_mod_diff_1', 'two_f', 'si_sa2f']


def speech_shaped_noise(rng: np.random.Generator, length: int, sample_rate: int) -> np.ndarray:
    """Resonant AR(2) noise with a slow syllable-rate envelope, peak 0.5."""
    excitation = rng.standard_normal(length)
    colored = lfilter([1.0], [1.0, -1.3, 0.6], excitation)
    t = np.arange(length) / sample_rate
    envelope = 0.6 + 0.4 * np.sin(2 * np.pi * 4.0 * t)
    x = colored * envelope
    return 0.5 * x / np.max(np.abs(x))


def degradation_step(system: int, item: int) -> int:
    return system * ITEMS_PER_SYSTEM + item


def make_corpus(outdir, seed: int = 0) -> Tuple[Path, Path]:
    """Write WAVs, manifest.json, MOV sidecars, two_f_params.txt and run_config.json."""
    outdir = Path(outdir)
    (outdir / 'audio').mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    length = int(SAMPLE_RATE * DURATION_S)

    reference = speech_shaped_noise(rng, length, SAMPLE_RATE)
    noise = rng.standard_normal(length)
    noise /= np.sqrt(np.mean(noise ** 2))
    ref_rms = np.sqrt(np.mean(reference ** 2))
    ref_path = outdir / 'audio' / 'reference.wav'
    save_wav(AudioSignal(reference, SAMPLE_RATE), ref_path)

    items = []
    mov_rows, sa_mov_rows = [], []
    for system in range(SYSTEMS):
        for item in range(ITEMS_PER_SYSTEM):
            k = degradation_step(system, item)
            snr_db = FIRST_SNR_DB - SNR_STEP_DB * k
            gain = ref_rms * 10 ** (-snr_db / 20.0)
            test = reference + gain * noise
            item_id, condition_id = f"item{item}", f"sys{system}"
            test_path = outdir / 'audio' / f"{condition_id}_{item_id}.wav"
            save_wav(AudioSignal(test, SAMPLE_RATE), test_path)

            items.append(ManifestItem(item_id=item_id, condition_id=condition_id,
                                      test_path=str(test_path.resolve()),
                                      ref_target_path=str(ref_path.resolve()),
                                      score_mean=FIRST_SCORE - SCORE_STEP * k, n_ratings=10))
            mov_rows.append([TEST_ID, item_id, condition_id, 0.2 * k, 5.0 * k + 1.0])
            sa_mov_rows.append([TEST_ID, item_id, condition_id, 0.15 * k, 4.0 * k])

    manifest_path = outdir / 'manifest.json'
    save_manifest(Dataset([Manifest(TEST_ID, items, pool='synthetic', criterion='baq',
                                    notes='noise-ordered golden corpus')]), manifest_path)

    for name, rows in (('movs.csv', mov_rows), ('sa_movs.csv', sa_mov_rows)):
        with open(outdir / name, 'w', newline='', encoding='utf-8') as f:
            writer = csv.writer(f, lineterminator='\n')
            writer.writerow(['test_id', 'item_id', 'condition_id', 'adb', 'avg_mod_diff_1'])
            writer.writerows(rows)

    (outdir / 'two_f_params.txt').write_text(TWO_F_PARAMS, encoding='utf-8')
    config = {
        'measures': MEASURES,
        'two_f': {'params_file': 'two_f_params.txt', 'mov_sidecar': 'movs.csv',
                  'sa_mov_sidecar': 'sa_movs.csv'},
        'target_rate': SAMPLE_RATE,
        'parallelism': 1,
        'seed': seed,
        'filter_len': 512,
    }
    config_path = outdir / 'run_config.json'
    config_path.write_text(json.dumps(config, indent=2) + '\n', encoding='utf-8')

    logger.info(f"Synthetic corpus with {len(items)} items written to {outdir}")
    return manifest_path, config_path


def main():
    parser = argparse.ArgumentParser(description='Generate the synthetic golden corpus')
    parser.add_argument('outdir', help='Output directory')
    parser.add_argument('--seed', type=int, default=0, help='Random seed (default: 0)')
    args = parser.parse_args()

    logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(levelname)s - %(message)s')
    manifest_path, config_path = make_corpus(args.outdir, args.seed)
    print(f"Manifest: {manifest_path}")
    print(f"Config:   {config_path}")


if __name__ == '__main__':
    main()
