import logging

import numpy as np

from exceptions import AllZero, EmptyAfterTrim
from waveforms.models import LabeledWaveforms, Waveform

logger = logging.getLogger(__name__)

TRIM_THRESHOLD = 0.05
TARGET_VMAX = 0.75
TARGET_SAMPLES = 12500

TRIM_MODES = ('pointwise', 'edges')


def trim_silence(w: Waveform, threshold=TRIM_THRESHOLD, mode='pointwise'):
    """
    Remove quiet samples.

    Args:
        w (Waveform): Input trace
        threshold (float): Samples with |v| below this value are silent (V)
        mode (str): 'pointwise' drops every silent sample, 'edges' only the
            leading and trailing silent runs

    Returns:
        Waveform: Retained samples in their original order
    """
    if threshold < 0:
        raise ValueError(f"threshold must be non-negative, got {threshold}")
    if mode not in TRIM_MODES:
        raise ValueError(f"mode must be one of {TRIM_MODES}, got {mode!r}")

    loud = np.abs(w.samples) >= threshold
    if not np.any(loud):
        raise EmptyAfterTrim(f"no sample reaches the trim threshold {threshold} V")

    if mode == 'pointwise':
        kept = w.samples[loud]
    else:
        idx = np.flatnonzero(loud)
        kept = w.samples[idx[0]:idx[-1] + 1]
    return w.with_samples(kept)


def normalize_amplitude(w: Waveform, vmax=TARGET_VMAX):
    """
    Scale a trace by one positive factor so that its peak magnitude is vmax.

    The peak sample is pinned to +/-vmax so the target holds exactly.
    """
    if not vmax > 0:
        raise ValueError(f"vmax must be positive, got {vmax}")
    magnitudes = np.abs(w.samples)
    peak_index = int(np.argmax(magnitudes))
    peak = magnitudes[peak_index]
    if peak == 0:
        raise AllZero("cannot normalize an all-zero waveform")

    scaled = w.samples * (vmax / peak)
    np.clip(scaled, -vmax, vmax, out=scaled)
    scaled[peak_index] = np.copysign(vmax, w.samples[peak_index])
    return w.with_samples(scaled)


def fit_length(w: Waveform, n_samples=TARGET_SAMPLES):
    """Zero-pad at the end or crop to exactly n_samples."""
    if n_samples < 1:
        raise ValueError(f"n_samples must be at least 1, got {n_samples}")
    if len(w) >= n_samples:
        return w.with_samples(w.samples[:n_samples])
    padded = np.zeros(n_samples)
    padded[:len(w)] = w.samples
    return w.with_samples(padded)


def preprocess(w: Waveform, threshold=TRIM_THRESHOLD, vmax=TARGET_VMAX,
               n_samples=TARGET_SAMPLES, mode='pointwise', trim=True):
    """Apply trim -> normalize -> fit_length to one trace."""
    if trim:
        w = trim_silence(w, threshold, mode)
    w = normalize_amplitude(w, vmax)
    if n_samples:
        w = fit_length(w, n_samples)
    return w


def preprocess_collection(data: LabeledWaveforms, **kwargs):
    """
    Apply `preprocess` to every item of a collection, keeping labels and split.

    Returns:
        LabeledWaveforms: New collection
    """
    processed = [preprocess(w, **kwargs) for w in data.waveforms]
    logger.info(f"Preprocessed {len(processed)} waveforms")
    return LabeledWaveforms(
        waveforms=processed,
        labels=data.labels.copy(),
        class_names=list(data.class_names),
        train_index=None if data.train_index is None else data.train_index.copy(),
        test_index=None if data.test_index is None else data.test_index.copy(),
        metadata=dict(data.metadata, preprocess=dict(kwargs)),
    )
