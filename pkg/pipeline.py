import logging
import os
import time
from dataclasses import replace

import numpy as np
import pandas as pd

from aimc.crossbar import (calibrate_output_ranges, load_program, map_model, repeated_inference, save_program,
                           sigma_prog_sweep, utilization_frame, utilization_summary)
from aimc.hwa import hwa_retrain
from config import Config, RunConfig
from dnpu.characterize import (chirp_response_batch, imd_contrast, static_power_survey, tau_survey, thd_sweep,
                               two_tone_response_batch)
from dnpu.models import ControlSet, control_matrix
from dnpu.surrogate import sample_device
from energy.model import mvm_schedule, schedule_frame
from energy.report import build_report, published_reference
from exceptions import ConfigError, HashMismatch, MissingArtifact, StageFailure
from features.bank import extract_dataset, sample_control_bank
from features.models import BankSpec
from features.normalize import normalize_dataset
from features.store import read_feature_dataset, write_feature_dataset
from helpers import atomic_write_text, derive_seed, read_json, sha256_file, write_json
from net.arch import ArchSpec, count_macs
from net.checkpoint import load_checkpoint, save_checkpoint
from net.model import build
from net.train import evaluate, train
from reporting.report_generator import RunReportGenerator
from waveforms.audio_io import load_dataset
from waveforms.generators import gen_synthetic_task
from waveforms.models import ChirpParams
from waveforms.preprocessing import preprocess_collection
from waveforms.spectral import harmonic_ridges, tone_table

TOOL_VERSION = '1.0.0'
MANIFEST_NAME = 'manifest.json'

STAGES = ('characterize', 'extract', 'train', 'retrain-hwa', 'map', 'infer', 'energy')

# Upstream artefacts each stage reads, relative to the run directory
STAGE_INPUTS = {
    'characterize': (),
    'extract': (),
    'train': ('extract/features.bin',),
    'retrain-hwa': ('extract/features.bin', 'train/model.json', 'train/model.bin'),
    'map': ('extract/features.bin', 'train/model.json', 'train/model.bin',
            'retrain-hwa/model_hwa.json', 'retrain-hwa/model_hwa.bin'),
    'infer': ('extract/features.bin', 'train/model.json', 'train/model.bin',
              'retrain-hwa/model_hwa.json', 'retrain-hwa/model_hwa.bin',
              'map/crossbar_fp.json', 'map/crossbar_fp.bin', 'map/crossbar_hwa.json', 'map/crossbar_hwa.bin'),
    'energy': ('extract/dataset.json', 'train/model.json', 'map/crossbar_hwa.json', 'map/crossbar_hwa.bin',
               'infer/inference.json'),
}


def stage_names(stage):
    """Expand a --stage value into the ordered list of stages to run."""
    if stage == 'all':
        return list(STAGES)
    if stage not in STAGES:
        raise ConfigError(f"unknown stage '{stage}'; choose one of {', '.join(STAGES)} or all")
    return [stage]


class Pipeline:
    """
    Stage orchestrator of a simulator run.
    Every stage reads its predecessors' artefacts from the run directory, writes
    its own into `<out>/<stage>/`, and is recorded in the run manifest with the
    SHA-256 of each input and output.
    """

    def __init__(self, config: RunConfig, out_dir, workers=None, channel_chunk=None):
        """
        Args:
            config (RunConfig): Validated run configuration
            out_dir (str): Run directory
            workers (int, optional): Extraction worker processes (default Config.WORKERS)
            channel_chunk (int, optional): Channels per extraction unit (default Config.CHANNEL_CHUNK)
        """
        self.config = config
        self.out_dir = out_dir
        self.workers = workers or Config.WORKERS
        self.channel_chunk = channel_chunk or Config.CHANNEL_CHUNK
        os.makedirs(out_dir, exist_ok=True)

        self.logger = logging.getLogger('pipeline')
        self.manifest = self._load_manifest()

        self.runners = {
            'characterize': self.characterize,
            'extract': self.extract,
            'train': self.train,
            'retrain-hwa': self.retrain_hwa,
            'map': self.map,
            'infer': self.infer,
            'energy': self.energy,
        }

    # ------------------------------------------------------------------ manifest

    @property
    def manifest_path(self):
        return os.path.join(self.out_dir, MANIFEST_NAME)

    def _load_manifest(self):
        if os.path.exists(self.manifest_path):
            manifest = read_json(self.manifest_path)
            manifest.setdefault('stages', {})
            return manifest
        return {'stages': {}}

    def write_manifest(self):
        self.manifest['tool_version'] = TOOL_VERSION
        self.manifest['config'] = self.config.snapshot()
        write_json(self.manifest_path, self.manifest)
        self.logger.info(f"Run manifest written to {self.manifest_path}")
        return self.manifest_path

    def _recorded_hash(self, relpath):
        for record in self.manifest['stages'].values():
            if relpath in record.get('outputs', {}):
                return record['outputs'][relpath]
        return None

    def check_inputs(self, stage):
        """
        Hash the upstream artefacts of a stage.

        Returns:
            dict: relative path -> sha256

        Raises:
            MissingArtifact: An input file does not exist
            HashMismatch: An input differs from what its producing stage recorded
        """
        hashes = {}
        for relpath in STAGE_INPUTS[stage]:
            path = os.path.join(self.out_dir, relpath)
            if not os.path.exists(path):
                raise MissingArtifact(f"stage '{stage}' needs {relpath}; run its upstream stage first")
            digest = sha256_file(path)
            recorded = self._recorded_hash(relpath)
            if recorded is not None and recorded != digest:
                raise HashMismatch(f"{relpath} changed since it was produced; rerun the stage that writes it")
            hashes[relpath] = digest
        return hashes

    def _output_hashes(self, stage):
        stage_dir = os.path.join(self.out_dir, stage)
        hashes = {}
        for root, _, files in sorted(os.walk(stage_dir)):
            for filename in sorted(files):
                path = os.path.join(root, filename)
                relpath = os.path.relpath(path, self.out_dir).replace(os.sep, '/')
                hashes[relpath] = sha256_file(path)
        return hashes

    # ------------------------------------------------------------------ running

    def run(self, stages):
        """
        Run stages in order and write the manifest at the end.

        Args:
            stages (list): Stage names, in execution order

        Returns:
            dict: The run manifest
        """
        try:
            for stage in stages:
                self.run_stage(stage)
        finally:
            self.write_manifest()
        return self.manifest

    def run_stage(self, stage):
        inputs = self.check_inputs(stage)
        self.logger.info(f"Stage '{stage}' started")
        started = time.perf_counter()
        try:
            self.runners[stage](RunReportGenerator(os.path.join(self.out_dir, stage)))
        except Exception as e:
            self.logger.error(f"Stage '{stage}' failed: {str(e)}", exc_info=True)
            raise StageFailure(stage, e) from e
        outputs = self._output_hashes(stage)
        self.manifest['stages'][stage] = {
            'inputs': inputs,
            'outputs': outputs,
            'wall_clock_s': time.perf_counter() - started,
        }
        self.logger.info(f"Stage '{stage}' finished with {len(outputs)} artefacts")

    # ------------------------------------------------------------------ shared loaders

    def _path(self, relpath):
        return os.path.join(self.out_dir, relpath)

    def _device(self):
        device = sample_device(self.config.device.seed)
        return device.linearized() if self.config.device.linear else device

    def _dataset(self):
        ds = self.config.dataset
        if ds.kind == 'synthetic':
            data = gen_synthetic_task(ds.n_classes, ds.per_class, ds.seed, ds.test_fraction, snr_db=ds.snr_db)
        else:
            data = load_dataset(ds.path, ds.test_fraction, ds.seed)
        pp = self.config.preprocess
        return preprocess_collection(data, threshold=pp.threshold, vmax=pp.vmax, n_samples=pp.n_samples,
                                     mode=pp.mode, trim=pp.trim)

    def _features(self):
        return read_feature_dataset(self._path('extract/features.bin'))

    def _models(self):
        fp, _ = load_checkpoint(self._path('train/model.json'))
        hwa, _ = load_checkpoint(self._path('retrain-hwa/model_hwa.json'))
        return {'fp': fp, 'hwa': hwa}

    # ------------------------------------------------------------------ stages

    def characterize(self, report):
        cfg = self.config
        ch = cfg.characterize
        device = self._device()
        circuit = cfg.circuit.build()
        report.write_json(device.to_dict(), 'device.json')

        tau_controls = sample_control_bank(BankSpec(ch.n_tau_sets, derive_seed(ch.seed, 'tau')))
        tau = tau_survey(device, circuit, tau_controls)
        report.write_csv(tau, 'tau.csv')
        report.write_histogram_svg(tau['tau_s'], 'tau_histogram.svg', 'Step-response time constant',
                                   'tau (s)')

        power_controls = sample_control_bank(BankSpec(ch.n_power_sets, derive_seed(ch.seed, 'power')))
        power = pd.DataFrame(control_matrix(power_controls), columns=[f"c{j + 1}_V" for j in range(6)])
        power.insert(0, 'set_index', np.arange(len(power)))
        power['power_W'] = static_power_survey(device, power_controls)
        report.write_csv(power, 'static_power.csv')
        self.logger.info(f"Static power: mean {power['power_W'].mean() * 1e9:.3f} nW over {len(power)} sets")

        random_controls = sample_control_bank(BankSpec(ch.n_chirp_random, derive_seed(ch.seed, 'chirp')))
        controls = [ControlSet.zero()] + list(random_controls)
        labels = ['zero'] + [f"random{i + 1}" for i in range(len(random_controls))]

        params = ChirpParams()
        ridges = []
        for label, (_, spec) in zip(labels, chirp_response_batch(device, circuit, controls, params)):
            times, freqs, power_db = spec
            report.write_spectrogram_svg(times, freqs, power_db, f"chirp_{label}.svg",
                                         f"Chirp response ({label} controls)")
            grid = pd.DataFrame({
                't_s': np.repeat(times, len(freqs)),
                'freq_hz': np.tile(freqs, len(times)),
                'power_db': power_db.T.ravel(),
            })
            report.write_csv(grid, f"chirp_{label}.csv")
            table = harmonic_ridges(spec, params)
            table.insert(0, 'control', label)
            ridges.append(table)
        report.write_csv(pd.concat(ridges, ignore_index=True), 'chirp_harmonics.csv')

        tones = []
        imd = []
        imd_frequency = abs(2.0 * ch.f1 - ch.f2)
        for label, spectrum in zip(labels, two_tone_response_batch(device, circuit, controls, ch.f1, ch.f2)):
            floor_db = float(np.median(spectrum.power_db)) + 10.0
            for frequency, level in tone_table(spectrum, floor_db):
                tones.append({'control': label, 'freq_hz': frequency, 'power_db': level})
            imd.append({'control': label, 'freq_hz': imd_frequency,
                        'contrast_db': imd_contrast(spectrum, imd_frequency)})
        report.write_csv(pd.DataFrame(tones, columns=['control', 'freq_hz', 'power_db']), 'tone_table.csv')
        report.write_csv(pd.DataFrame(imd, columns=['control', 'freq_hz', 'contrast_db']), 'imd.csv')

        report.write_csv(thd_sweep(device, circuit), 'thd_sweep.csv')

    def extract(self, report):
        cfg = self.config
        data = self._dataset()
        spec = cfg.bank.build()
        features = extract_dataset(self._device(), cfg.circuit.build(), spec, data,
                                   workers=self.workers, channel_chunk=self.channel_chunk)
        features = normalize_dataset(features)
        write_feature_dataset(features, report.path('features.bin'))

        controls = pd.DataFrame(control_matrix(sample_control_bank(spec)),
                                columns=[f"c{j + 1}_V" for j in range(6)])
        controls.insert(0, 'channel', np.arange(len(controls)))
        report.write_csv(controls, 'bank_controls.csv')
        report.write_json({
            'items': int(features.values.shape[0]),
            'channels': features.channels,
            'frames': features.frames,
            'frame_rate': features.frame_rate,
            'class_names': features.class_names,
            'n_train': int(features.train_index.size),
            'n_test': int(features.test_index.size),
            'provenance': features.provenance,
            'normalizer': features.normalizer,
        }, 'dataset.json')

    def train(self, report):
        cfg = self.config
        features = self._features()
        arch = cfg.arch.build(features.channels, features.frames, features.n_classes)
        model = build(arch, cfg.arch.init_seed, input_len=features.frames)
        train_config = cfg.train.build()
        model, history = train(model, features, train_config)
        result = evaluate(model, features)
        save_checkpoint(model, report.report_dir, 'model', train_config.to_dict(),
                        metrics={'test_accuracy': result['accuracy'], 'confusion': result['confusion']},
                        extra={'input_len': features.frames, 'macs': count_macs(arch, features.frames)})
        report.write_csv(history, 'history.csv')
        report.write_training_curve_svg(history, 'training_curve.svg', f"{arch.name} training")
        self.logger.info(f"{arch.name}: {model.n_params()} parameters, test accuracy {result['accuracy']:.3f}")

    def retrain_hwa(self, report):
        cfg = self.config
        features = self._features()
        model, manifest = load_checkpoint(self._path('train/model.json'))
        hwa = cfg.hwa.build()
        train_config = cfg.train.build()
        if cfg.hwa.epochs is not None:
            train_config = replace(train_config, epochs=cfg.hwa.epochs)
        retrained, history = hwa_retrain(model, features, hwa, train_config)
        result = evaluate(retrained, features)
        save_checkpoint(retrained, report.report_dir, 'model_hwa', train_config.to_dict(),
                        metrics={'test_accuracy': result['accuracy'], 'confusion': result['confusion']},
                        extra={'input_len': manifest['input_len'], 'macs': manifest['macs'],
                               'hwa': hwa.to_dict()})
        report.write_csv(history, 'history.csv')
        report.write_training_curve_svg(history, 'training_curve.svg', 'Hardware-aware retraining')

    def map(self, report):
        cfg = self.config
        features = self._features()
        x_train, _ = features.train()
        hwa = cfg.hwa.build()
        for tag, model in self._models().items():
            program = map_model(model, cfg.crossbar.tile_dim, input_len=features.frames)
            program = calibrate_output_ranges(program, model, x_train, hwa)
            save_program(program, report.report_dir, f"crossbar_{tag}")
            if tag == 'hwa':
                report.write_csv(utilization_frame(program), 'utilization.csv')
                summary = utilization_summary(program)
                report.write_json(summary, 'utilization.json')
                self.logger.info(f"Mapped {summary['tiles']} tiles on {summary['cores_used']} cores "
                                 f"({summary['packed_cores']} if densely packed)")

    def infer(self, report):
        cfg = self.config
        features = self._features()
        x_test, y_test = features.test()
        hwa = cfg.hwa.build()
        frames = []
        sweeps = []
        results = {}
        for tag, model in self._models().items():
            program = load_program(self._path(f"map/crossbar_{tag}.json"))
            digital = evaluate(model, features)['accuracy']
            frame, summary = repeated_inference(program, model, x_test, y_test, hwa, cfg.infer.repetitions,
                                                seed=cfg.infer.seed, sigma_prog=cfg.crossbar.sigma_prog)
            frame.insert(0, 'model', tag)
            frames.append(frame)
            summary['digital_accuracy'] = digital
            summary['accuracy_drop'] = digital - summary['mean']
            results[tag] = summary

            sweep = sigma_prog_sweep(program, model, x_test, y_test, cfg.infer.sigma_prog_sweep, hwa,
                                     cfg.infer.repetitions, cfg.infer.seed)
            sweep.insert(0, 'model', tag)
            sweeps.append(sweep)

        report.write_csv(pd.concat(frames, ignore_index=True), 'repetitions.csv')
        report.write_csv(pd.concat(sweeps, ignore_index=True), 'sigma_sweep.csv')
        report.write_json({'sigma_prog': cfg.crossbar.sigma_prog, 'models': results}, 'inference.json')
        lines = [f"{tag}: {summary['text']}; digital {100 * summary['digital_accuracy']:.2f} %"
                 for tag, summary in results.items()]
        atomic_write_text(report.path('inference.txt'), '\n'.join(lines) + '\n')

    def energy(self, report):
        cfg = self.config
        dataset = read_json(self._path('extract/dataset.json'))
        checkpoint = read_json(self._path('train/model.json'))
        program = load_program(self._path('map/crossbar_hwa.json'))
        constants = cfg.energy.build()
        arch = ArchSpec.from_dict(checkpoint['arch'])

        schedule = mvm_schedule(program)
        energy = build_report(schedule, dataset['channels'], cfg.energy.duration_s, constants, name=arch.name,
                              macs=count_macs(arch, dataset['frames']),
                              interface_energy_J=cfg.energy.interface_energy_J)
        report.write_json(energy.to_dict(), 'energy_report.json')
        report.write_csv(schedule_frame(schedule, constants), 'energy_layers.csv')
        references = published_reference(constants)
        report.write_json({key: value.to_dict() for key, value in references.items()}, 'published_reference.json')
        report.write_csv(pd.DataFrame([energy.summary_row()] + [r.summary_row() for r in references.values()]),
                         'energy_summary.csv')

        inference = read_json(self._path('infer/inference.json'))
        report.write_summary({
            'run_name': arch.name,
            'seed': cfg.seed,
            'n_channels': dataset['channels'],
            'arch_name': arch.name,
            'stages': [{'name': name, 'outputs': sorted(self.manifest['stages'][name]['outputs'])}
                       for name in STAGES if name != 'energy' and name in self.manifest['stages']],
            'training': [{'name': 'full precision', 'n_params': checkpoint['n_params'],
                          'macs': checkpoint['macs'],
                          'accuracy': checkpoint['metrics']['test_accuracy']}],
            'inference': [{'name': tag, 'text': summary['text']}
                          for tag, summary in inference['models'].items()],
            'utilization': utilization_summary(program),
            'energy': energy.to_dict(),
        })
