import logging
import os
import warnings

import numpy as np
from scipy.io import wavfile
from sklearn.model_selection import train_test_split

from exceptions import ConfigError, EmptyClassDirectory, MalformedWav, UnsupportedEncoding
from waveforms.models import LabeledWaveforms, Waveform

logger = logging.getLogger(__name__)

INT16_FULL_SCALE = 32768.0
DEFAULT_TEST_FRACTION = 0.1


def load_wav(path):
    """
    Read a 16-bit PCM mono WAV file.

    Full-scale int16 maps to +/-1 V.

    Args:
        path (str): File path

    Returns:
        Waveform: Samples in V at the file's sample rate
    """
    try:
        with warnings.catch_warnings():
            warnings.simplefilter('ignore', wavfile.WavFileWarning)
            rate, data = wavfile.read(path)
    except (ValueError, EOFError, IndexError) as e:
        raise MalformedWav(f"{path}: {e}") from e

    if data.ndim != 1:
        raise UnsupportedEncoding(f"{path}: {data.shape[1]} channels, only mono is supported")
    if data.dtype != np.int16:
        raise UnsupportedEncoding(f"{path}: sample type {data.dtype}, only 16-bit PCM is supported")
    if data.size == 0:
        raise MalformedWav(f"{path}: no audio frames")
    return Waveform(data.astype(np.float64) / INT16_FULL_SCALE, float(rate))


def write_wav(path, w: Waveform):
    """Write a trace as 16-bit PCM mono (values clipped to +/-1 V)."""
    data = np.clip(np.round(w.samples * INT16_FULL_SCALE), -32768, 32767).astype('<i2')
    wavfile.write(path, int(round(w.sample_rate)), data)


def stratified_split(labels, test_fraction=DEFAULT_TEST_FRACTION, seed=0):
    """
    Deterministic stratified train/test split.

    Args:
        labels (array-like): Class index per item
        test_fraction (float): Share of each class held out
        seed (int): Split seed

    Returns:
        tuple: (train_index, test_index), both sorted
    """
    labels = np.asarray(labels)
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    index = np.arange(labels.size)
    train_index, test_index = train_test_split(
        index,
        test_size=test_fraction,
        stratify=labels,
        random_state=int(seed) % (2 ** 32),
        shuffle=True,
    )
    return np.sort(train_index), np.sort(test_index)


def load_dataset(directory, test_fraction=DEFAULT_TEST_FRACTION, seed=0):
    """
    Load a `<label>/<file>.wav` dataset tree.

    Labels are the sorted subdirectory names; files are read in sorted order.

    Args:
        directory (str): Dataset root
        test_fraction (float): Held-out share per class
        seed (int): Split seed

    Returns:
        LabeledWaveforms: Collection with a stratified split
    """
    if not os.path.isdir(directory):
        raise FileNotFoundError(f"Dataset directory not found: {directory}")

    class_names = sorted(
        name for name in os.listdir(directory) if os.path.isdir(os.path.join(directory, name))
    )
    if not class_names:
        raise EmptyClassDirectory(f"{directory}: no label directories")

    waveforms = []
    labels = []
    for label, name in enumerate(class_names):
        class_dir = os.path.join(directory, name)
        files = sorted(f for f in os.listdir(class_dir) if f.lower().endswith('.wav'))
        if not files:
            raise EmptyClassDirectory(f"{class_dir}: no WAV files")
        for filename in files:
            waveforms.append(load_wav(os.path.join(class_dir, filename)))
            labels.append(label)
        logger.debug(f"Loaded {len(files)} files for label '{name}'")

    labels = np.asarray(labels, dtype=np.int64)
    counts = np.bincount(labels, minlength=len(class_names))
    for name, count in zip(class_names, counts):
        if count < 2:
            raise ConfigError(f"{os.path.join(directory, name)}: {count} WAV file, "
                              f"a stratified split needs at least 2 per label")
    try:
        train_index, test_index = stratified_split(labels, test_fraction, seed)
    except ValueError as e:
        raise ConfigError(f"{directory}: cannot hold out {test_fraction:g} of {labels.size} files "
                          f"across {len(class_names)} labels: {e}") from e
    logger.info(f"Loaded dataset {directory}: {len(waveforms)} files, {len(class_names)} labels")
    return LabeledWaveforms(
        waveforms=waveforms,
        labels=labels,
        class_names=class_names,
        train_index=train_index,
        test_index=test_index,
        metadata={'source': os.path.abspath(directory), 'seed': int(seed)},
    )


def dump_trace_csv(w: Waveform, path):
    """Write `t_s,v` rows."""
    w.to_frame().to_csv(path, index=False)


def dump_spectrum_csv(s, path):
    """Write `freq_hz,power_db` rows."""
    s.to_frame().to_csv(path, index=False)
