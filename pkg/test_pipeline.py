import json
import logging
import os

import numpy as np
import pandas as pd
import pytest

from app import EXIT_CONFIG, EXIT_OK, EXIT_STAGE, main
from config import RunConfig, load_run_config
from exceptions import ConfigError, HashMismatch, MissingArtifact
from helpers import read_json
from pipeline import STAGES, Pipeline, stage_names
from waveforms.audio_io import load_dataset, write_wav
from waveforms.models import Waveform

logger = logging.getLogger('test_pipeline')

SMALL_CONFIG = {
    'bank': {'n_channels': 2},
    'dataset': {'n_classes': 2, 'per_class': 6},
    'preprocess': {'n_samples': 1250},
    'arch': {'name': 'head-2'},
    'train': {'epochs': 2, 'batch_size': 4},
    'hwa': {'epochs': 1},
    'infer': {'repetitions': 2, 'sigma_prog_sweep': [0.0, 0.03]},
    'characterize': {'n_tau_sets': 2, 'n_power_sets': 3, 'n_chirp_random': 1},
}

PIPELINE_STAGES = [s for s in STAGES if s != 'characterize']


def _write_config(directory, payload=None):
    path = os.path.join(str(directory), 'config.json')
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(SMALL_CONFIG if payload is None else payload, f)
    return path


@pytest.fixture(scope='module')
def finished_run(tmp_path_factory):
    root = tmp_path_factory.mktemp('run')
    out = str(root / 'out')
    config = load_run_config(_write_config(root))
    manifest = Pipeline(config, out).run(PIPELINE_STAGES)
    return out, config, manifest


def test_stage_names():
    assert stage_names('all') == list(STAGES)
    assert stage_names('map') == ['map']
    with pytest.raises(ConfigError):
        stage_names('deploy')


def test_config_defaults_and_overrides(tmp_path):
    config = load_run_config()
    assert config == RunConfig()
    assert config.bank.n_channels == 16
    assert config.dataset.test_fraction == pytest.approx(1.0 / 6.0)

    seeded = load_run_config(seed=7)
    assert seeded.seed == 7
    assert seeded.train.seed != config.train.seed
    assert seeded == load_run_config(seed=7)

    wide = load_run_config(channels=64)
    assert wide.bank.n_channels == 64
    assert wide.arch.name == 'head-64'


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_run_config(str(tmp_path / 'missing.json'))
    with pytest.raises(ConfigError):
        load_run_config(_write_config(tmp_path, {'bank': {'n_chanels': 4}}))
    with pytest.raises(ConfigError):
        load_run_config(_write_config(tmp_path, {'dataset': {'kind': 'directory'}}))
    with pytest.raises(ConfigError):
        load_run_config(channels=0)
    bad = tmp_path / 'bad.json'
    bad.write_text('{not json')
    with pytest.raises(ConfigError):
        load_run_config(str(bad))


def test_cli_exit_code_for_bad_config(tmp_path):
    code = main(['--config', str(tmp_path / 'missing.json'), '--out', str(tmp_path / 'out')])
    assert code == EXIT_CONFIG


def test_cli_exit_code_for_missing_upstream(tmp_path):
    code = main(['--config', _write_config(tmp_path), '--out', str(tmp_path / 'out'), '--stage', 'train'])
    assert code == EXIT_STAGE
    assert os.path.exists(tmp_path / 'out' / 'run.log')


def test_missing_artifact_is_reported(tmp_path):
    pipeline = Pipeline(load_run_config(_write_config(tmp_path)), str(tmp_path / 'out'))
    with pytest.raises(MissingArtifact):
        pipeline.run(['map'])
    assert os.path.exists(pipeline.manifest_path)


def test_run_writes_every_stage(finished_run):
    out, _, manifest = finished_run
    assert list(manifest['stages']) == PIPELINE_STAGES
    for relpath in ('extract/features.bin', 'extract/dataset.json', 'train/model.json', 'train/history.csv',
                    'retrain-hwa/model_hwa.json', 'map/crossbar_hwa.json', 'map/utilization.csv',
                    'infer/inference.json', 'infer/inference.txt', 'energy/energy_report.json',
                    'energy/summary.html'):
        assert os.path.exists(os.path.join(out, relpath)), relpath


def test_manifest_records_hashes_and_config(finished_run):
    out, config, _ = finished_run
    manifest = read_json(os.path.join(out, 'manifest.json'))
    assert manifest['tool_version']
    assert manifest['config'] == config.snapshot()
    train = manifest['stages']['train']
    assert set(train['inputs']) == {'extract/features.bin'}
    assert train['inputs']['extract/features.bin'] == manifest['stages']['extract']['outputs']['extract/features.bin']
    assert train['wall_clock_s'] >= 0.0


def test_extract_and_train_outputs(finished_run):
    out, _, _ = finished_run
    dataset = read_json(os.path.join(out, 'extract', 'dataset.json'))
    assert dataset['channels'] == 2
    assert dataset['frames'] == 125
    assert dataset['n_train'] == 10
    assert dataset['n_test'] == 2
    assert len(pd.read_csv(os.path.join(out, 'extract', 'bank_controls.csv'))) == 2

    history = pd.read_csv(os.path.join(out, 'train', 'history.csv'))
    assert history['epoch'].tolist() == [1, 2]
    checkpoint = read_json(os.path.join(out, 'train', 'model.json'))
    assert checkpoint['input_len'] == 125
    assert checkpoint['n_params'] == 2 * 32 * 8 + 32 + 32 * 2 + 2


def test_infer_and_energy_outputs(finished_run):
    out, _, _ = finished_run
    inference = read_json(os.path.join(out, 'infer', 'inference.json'))
    assert set(inference['models']) == {'fp', 'hwa'}
    for summary in inference['models'].values():
        assert 'mean ± std over 2 repetitions' in summary['text']
        assert summary['accuracy_drop'] == pytest.approx(summary['digital_accuracy'] - summary['mean'])
    sweep = pd.read_csv(os.path.join(out, 'infer', 'sigma_sweep.csv'))
    assert len(sweep) == 4

    report = read_json(os.path.join(out, 'energy', 'energy_report.json'))
    assert report['n_channels'] == 2
    assert report['dnpu_power_W'] == pytest.approx(10e-9)
    assert report['sequential_mvms'] == 118 + 1
    reference = read_json(os.path.join(out, 'energy', 'published_reference.json'))
    assert reference['fused_fc']['core_weighted_mvms'] == 5861


def test_rerun_gives_identical_artefacts(finished_run, tmp_path):
    out, config, manifest = finished_run
    again = Pipeline(config, str(tmp_path / 'again')).run(PIPELINE_STAGES)
    for stage in PIPELINE_STAGES:
        first = {os.path.basename(k): v for k, v in manifest['stages'][stage]['outputs'].items()}
        second = {os.path.basename(k): v for k, v in again['stages'][stage]['outputs'].items()}
        assert first == second, stage


def test_changed_upstream_is_detected(finished_run, tmp_path):
    out, config, _ = finished_run
    copy_dir = tmp_path / 'copy'
    pipeline = Pipeline(config, str(copy_dir))
    pipeline.run(['extract'])
    with open(copy_dir / 'extract' / 'features.bin', 'ab') as f:
        f.write(b'\x00')
    with pytest.raises(HashMismatch):
        Pipeline(config, str(copy_dir)).run(['train'])


def test_cli_runs_a_single_stage(tmp_path):
    code = main(['--config', _write_config(tmp_path), '--out', str(tmp_path / 'out'), '--stage', 'extract',
                 '--seed', '3'])
    assert code == EXIT_OK
    manifest = read_json(str(tmp_path / 'out' / 'manifest.json'))
    assert manifest['config']['seed'] == 3
    assert list(manifest['stages']) == ['extract']


@pytest.mark.slow
def test_characterize_stage(tmp_path):
    out = str(tmp_path / 'out')
    Pipeline(load_run_config(_write_config(tmp_path)), out).run(['characterize'])
    stage = os.path.join(out, 'characterize')
    tau = pd.read_csv(os.path.join(stage, 'tau.csv'))
    assert len(tau) == 2
    assert len(pd.read_csv(os.path.join(stage, 'static_power.csv'))) == 3
    assert (pd.read_csv(os.path.join(stage, 'static_power.csv'))['power_W'] >= -1e-24).all()
    imd = pd.read_csv(os.path.join(stage, 'imd.csv'))
    assert imd['control'].tolist() == ['zero', 'random1']
    assert imd['freq_hz'].iloc[0] == pytest.approx(26.0)
    for name in ('chirp_zero.svg', 'chirp_random1.svg', 'tau_histogram.svg', 'thd_sweep.csv', 'device.json'):
        assert os.path.exists(os.path.join(stage, name)), name
    logger.info(f"tau median over {len(tau)} sets: {tau['tau_s'].median():.3e} s")


def test_multi_worker_extraction_matches_serial(tmp_path):
    config = load_run_config(_write_config(tmp_path))
    serial = Pipeline(config, str(tmp_path / 'serial'), workers=1, channel_chunk=1).run(['extract'])
    parallel = Pipeline(config, str(tmp_path / 'parallel'), workers=2, channel_chunk=1).run(['extract'])
    assert serial['stages']['extract']['outputs'] == parallel['stages']['extract']['outputs']


def _write_wav_tree(root, files_per_label):
    for label, count in enumerate(files_per_label):
        label_dir = os.path.join(str(root), f"word{label}")
        os.makedirs(label_dir)
        for i in range(count):
            write_wav(os.path.join(label_dir, f"{i:03d}.wav"), Waveform(np.full(64, 0.1 * (label + 1)), 12500.0))


def test_directory_dataset_holds_out_ten_percent(tmp_path):
    _write_wav_tree(tmp_path / 'words', [20] * 10)
    config = load_run_config(_write_config(tmp_path, {'dataset': {'kind': 'directory',
                                                                  'path': str(tmp_path / 'words')}}))
    assert config.dataset.test_fraction == pytest.approx(0.1)
    assert load_run_config().dataset.test_fraction == pytest.approx(1.0 / 6.0)

    ds = config.dataset
    data = load_dataset(ds.path, ds.test_fraction, ds.seed)
    for label in range(10):
        assert np.sum(data.labels[data.train_index] == label) == 18
        assert np.sum(data.labels[data.test_index] == label) == 2


def test_cli_exit_code_for_unsplittable_directory(tmp_path):
    _write_wav_tree(tmp_path / 'words', [5, 1])
    path = _write_config(tmp_path, {'dataset': {'kind': 'directory', 'path': str(tmp_path / 'words')}})
    code = main(['--config', path, '--out', str(tmp_path / 'out'), '--stage', 'extract'])
    assert code == EXIT_CONFIG
