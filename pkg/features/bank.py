import logging
from concurrent.futures import ProcessPoolExecutor

import numpy as np
from scipy import signal as sps

from dnpu.models import CONTROL_LIMITS, N_CONTROLS, CircuitConfig, ControlSet, DnpuModel, control_matrix
from dnpu.simulator import simulate_batch
from dnpu.surrogate import sample_device
from features.models import BankSpec, FeatureDataset, FeatureMatrix
from helpers import derive_seed
from waveforms.models import LabeledWaveforms, Waveform

logger = logging.getLogger(__name__)

DEFAULT_CHANNEL_CHUNK = 16
DEFAULT_WAVEFORM_BLOCK = 32

FILTER_FREQ_RANGE = (100.0, 4000.0)
FILTER_Q_RANGE = (0.7, 5.0)
TANH_GAIN_RANGE = (1.0, 10.0)
FILTER_KINDS = ('lowpass', 'bandpass')
NONLINEARITIES = ('none', 'tanh')


def sample_control_bank(spec: BankSpec):
    """
    Draw one ControlSet per channel, uniform within each electrode's range.

    Returns:
        list: n_channels ControlSets
    """
    rng = np.random.default_rng(spec.control_seed)
    draws = rng.uniform(-1.0, 1.0, (spec.n_channels, N_CONTROLS)) * CONTROL_LIMITS
    return [ControlSet(tuple(row)) for row in draws]


def channel_devices(model: DnpuModel, spec: BankSpec):
    """Device per channel: the shared model, or one derived device per channel."""
    if not spec.per_channel_devices:
        return [model] * spec.n_channels
    return [sample_device(derive_seed(model.seed, 'channel', i)) for i in range(spec.n_channels)]


def downsample_avg(w: Waveform, factor):
    """
    Replace non-overlapping blocks of `factor` samples by their mean.

    The trailing partial block is dropped.
    """
    factor = int(factor)
    if factor < 1:
        raise ValueError(f"factor must be at least 1, got {factor}")
    if len(w) < factor:
        raise ValueError(f"waveform of {len(w)} samples is shorter than the factor {factor}")
    n_blocks = len(w) // factor
    blocks = w.samples[:n_blocks * factor].reshape(n_blocks, factor)
    return Waveform(blocks.mean(axis=1), w.sample_rate / factor)


def _provenance(model, spec: BankSpec, source='dnpu'):
    return {
        'source': source,
        'device_seed': int(model.seed),
        'control_seed': int(spec.control_seed),
        'downsample': int(spec.downsample),
        'per_channel_devices': bool(spec.per_channel_devices),
    }


def extract(model: DnpuModel, cfg: CircuitConfig, bank, w: Waveform, downsample=10, devices=None,
            spec: BankSpec = None):
    """
    Transform one waveform with every control set of a bank.

    Row i is downsample_avg(simulate(device_i, cfg, w, bank[i], 0 V)).

    Args:
        model (DnpuModel): Device shared by all channels
        cfg (CircuitConfig): Output circuit
        bank (list): ControlSets
        w (Waveform): Preprocessed input
        downsample (int): Block-average factor
        devices (list, optional): Device per channel, overrides `model`
        spec (BankSpec, optional): Recorded in the provenance

    Returns:
        FeatureMatrix: (len(bank), len(w) // downsample)
    """
    spec = spec or BankSpec(n_channels=len(bank), downsample=downsample)
    rows = devices if devices is not None else model
    traces = simulate_batch(rows, cfg, np.tile(w.samples, (len(bank), 1)), w.sample_rate, bank, 0.0)
    values = np.stack([downsample_avg(Waveform(trace, w.sample_rate), downsample).samples for trace in traces])
    return FeatureMatrix(values, w.sample_rate / downsample, _provenance(model, spec))


def _extract_unit(devices, cfg, inputs, sample_rate, controls, downsample):
    """Simulate one (waveform block x channel chunk) unit; rows ordered waveform-major."""
    n_waves = inputs.shape[0]
    n_channels = controls.shape[0]
    rows_in = np.repeat(inputs, n_channels, axis=0)
    row_controls = np.tile(controls, (n_waves, 1))
    row_devices = list(devices) * n_waves
    traces = simulate_batch(row_devices, cfg, rows_in, sample_rate, row_controls, 0.0)
    frames = np.stack([downsample_avg(Waveform(t, sample_rate), downsample).samples for t in traces])
    return frames.reshape(n_waves, n_channels, -1)


def _units(n_waves, n_channels, waveform_block, channel_chunk):
    return [
        (w0, min(w0 + waveform_block, n_waves), c0, min(c0 + channel_chunk, n_channels))
        for w0 in range(0, n_waves, waveform_block)
        for c0 in range(0, n_channels, channel_chunk)
    ]


def extract_dataset(model: DnpuModel, cfg: CircuitConfig, spec: BankSpec, data: LabeledWaveforms,
                    workers=1, channel_chunk=DEFAULT_CHANNEL_CHUNK, waveform_block=DEFAULT_WAVEFORM_BLOCK):
    """
    Extract DNPU features for a whole collection.

    Work is cut into fixed (waveform block x channel chunk) units that do not
    depend on the worker count, so any number of workers gives the same bits
    as a serial run.

    Args:
        model (DnpuModel): Device
        cfg (CircuitConfig): Output circuit
        spec (BankSpec): Bank specification
        data (LabeledWaveforms): Equal-length, preprocessed waveforms
        workers (int): Worker processes; 1 runs in-process
        channel_chunk (int): Channels per unit
        waveform_block (int): Waveforms per unit

    Returns:
        FeatureDataset: (items, channels, frames) features
    """
    bank = control_matrix(sample_control_bank(spec))
    devices = channel_devices(model, spec)
    inputs = data.as_matrix()
    rate = data.sample_rate
    n_waves = inputs.shape[0]
    n_frames = inputs.shape[1] // spec.downsample if n_waves else 0
    values = np.zeros((n_waves, spec.n_channels, n_frames))

    units = _units(n_waves, spec.n_channels, waveform_block, channel_chunk)
    logger.info(f"Extracting {spec.n_channels} channels for {n_waves} waveforms in {len(units)} units "
                f"({workers} worker(s))")

    jobs = [
        (devices[c0:c1], cfg, inputs[w0:w1], rate, bank[c0:c1], spec.downsample)
        for w0, w1, c0, c1 in units
    ]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_extract_unit, *zip(*jobs)))
    else:
        results = [_extract_unit(*job) for job in jobs]

    for (w0, w1, c0, c1), block in zip(units, results):
        values[w0:w1, c0:c1] = block
        logger.debug(f"Unit waveforms {w0}:{w1} channels {c0}:{c1} done")

    return FeatureDataset(
        values=values,
        labels=data.labels,
        frame_rate=(rate / spec.downsample) if rate else 0.0,
        class_names=list(data.class_names),
        train_index=data.train_index,
        test_index=data.test_index,
        provenance=_provenance(model, spec),
    )


def raw_dataset(data: LabeledWaveforms, downsample=1):
    """Use the (optionally block-averaged) waveforms themselves as one-channel features."""
    inputs = data.as_matrix()
    if downsample > 1:
        inputs = np.stack([downsample_avg(Waveform(row, data.sample_rate), downsample).samples for row in inputs])
    return FeatureDataset(
        values=inputs[:, None, :],
        labels=data.labels,
        frame_rate=data.sample_rate / downsample,
        class_names=list(data.class_names),
        train_index=data.train_index,
        test_index=data.test_index,
        provenance={'source': 'raw', 'downsample': int(downsample)},
    )


def channel_sos(kind, fc, q, rate):
    """
    Second-order section of one filterbank channel.

    Bandpass channels are a first-order Butterworth bandpass of bandwidth fc/q with geometric
    centre fc; lowpass channels are a second-order Butterworth at fc and ignore q.

    Args:
        kind (str): 'lowpass' or 'bandpass'
        fc (float): Cutoff or centre frequency in Hz
        q (float): Quality factor
        rate (float): Sample rate in S/s

    Returns:
        ndarray: (1, 6) sos array for `scipy.signal.sosfilt`
    """
    if kind == 'lowpass':
        return sps.iirfilter(2, fc, btype='lowpass', ftype='butter', output='sos', fs=rate)
    if kind == 'bandpass':
        half = 1.0 / (2.0 * q)
        centre = np.sqrt(1.0 + half ** 2)
        band = [fc * (centre - half), min(fc * (centre + half), 0.49 * rate)]
        return sps.iirfilter(1, band, btype='bandpass', ftype='butter', output='sos', fs=rate)
    raise ValueError(f"kind must be one of {FILTER_KINDS}, got {kind!r}")


def filterbank_channels(n_channels, seed, rate):
    """Random (fc, q, gain) per channel; fc is kept below 0.45*rate."""
    rng = np.random.default_rng(seed)
    fc = np.exp(rng.uniform(np.log(FILTER_FREQ_RANGE[0]), np.log(FILTER_FREQ_RANGE[1]), n_channels))
    q = rng.uniform(*FILTER_Q_RANGE, n_channels)
    gain = rng.uniform(*TANH_GAIN_RANGE, n_channels)
    return np.minimum(fc, 0.45 * rate), q, gain


def baseline_filterbank(w: Waveform, n_channels, kind='bandpass', nonlinearity='none', seed=0, downsample=10):
    """
    Random second-order filterbank with an optional tanh compression per channel.

    Args:
        w (Waveform): Input
        n_channels (int): Number of filters
        kind (str): 'lowpass' or 'bandpass'
        nonlinearity (str): 'none' or 'tanh'
        seed (int): Filter seed
        downsample (int): Block-average factor

    Returns:
        FeatureMatrix: (n_channels, len(w) // downsample)
    """
    if n_channels < 1:
        raise ValueError(f"n_channels must be at least 1, got {n_channels}")
    if nonlinearity not in NONLINEARITIES:
        raise ValueError(f"nonlinearity must be one of {NONLINEARITIES}, got {nonlinearity!r}")

    fc, q, gain = filterbank_channels(n_channels, seed, w.sample_rate)
    rows = []
    for i in range(n_channels):
        y = sps.sosfilt(channel_sos(kind, fc[i], q[i], w.sample_rate), w.samples)
        if nonlinearity == 'tanh':
            y = np.tanh(gain[i] * y)
        rows.append(downsample_avg(Waveform(y, w.sample_rate), downsample).samples)

    provenance = {'source': f"filterbank-{kind}-{nonlinearity}", 'filter_seed': int(seed),
                  'downsample': int(downsample)}
    return FeatureMatrix(np.stack(rows), w.sample_rate / downsample, provenance)


def filterbank_dataset(data: LabeledWaveforms, n_channels, kind='bandpass', nonlinearity='none', seed=0,
                       downsample=10):
    """Apply `baseline_filterbank` to every item of a collection."""
    matrices = [baseline_filterbank(w, n_channels, kind, nonlinearity, seed, downsample) for w in data.waveforms]
    values = np.stack([fm.values for fm in matrices]) if matrices else np.zeros((0, n_channels, 0))
    return FeatureDataset(
        values=values,
        labels=data.labels,
        frame_rate=matrices[0].frame_rate if matrices else 0.0,
        class_names=list(data.class_names),
        train_index=data.train_index,
        test_index=data.test_index,
        provenance=matrices[0].provenance if matrices else {},
    )
