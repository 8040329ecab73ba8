import logging

import numpy as np

from exceptions import ShapeMismatch
from features.models import FeatureDataset

logger = logging.getLogger(__name__)

STD_FLOOR = 1e-12


def fit_normalizer(values):
    """
    Per-channel mean and standard deviation over items and frames.

    Args:
        values (ndarray): Training features (items, channels, frames)

    Returns:
        dict: {'mean': [...], 'std': [...]} with one entry per channel
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 3 or values.shape[0] == 0:
        raise ValueError(f"need a non-empty (items, channels, frames) array, got {values.shape}")
    mean = values.mean(axis=(0, 2))
    std = np.maximum(values.std(axis=(0, 2)), STD_FLOOR)
    return {'mean': mean.tolist(), 'std': std.tolist()}


def apply_normalizer(values, normalizer):
    """Z-score every channel with statistics from `fit_normalizer`."""
    values = np.asarray(values, dtype=np.float64)
    mean = np.asarray(normalizer['mean'])
    std = np.asarray(normalizer['std'])
    if values.shape[-2] != mean.size:
        raise ShapeMismatch(f"normalizer has {mean.size} channels, features have {values.shape[-2]}")
    return (values - mean[:, None]) / std[:, None]


def normalize_dataset(dataset: FeatureDataset):
    """
    Z-score a dataset with statistics from its training split only.

    Returns:
        FeatureDataset: Normalized copy carrying the statistics
    """
    train_values, _ = dataset.train()
    normalizer = fit_normalizer(train_values)
    logger.debug(f"Normalizer fitted on {train_values.shape[0]} training items")
    return FeatureDataset(
        values=apply_normalizer(dataset.values, normalizer),
        labels=dataset.labels,
        frame_rate=dataset.frame_rate,
        class_names=list(dataset.class_names),
        train_index=dataset.train_index,
        test_index=dataset.test_index,
        provenance=dict(dataset.provenance),
        normalizer=normalizer,
    )
