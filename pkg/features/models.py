from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np


@dataclass(frozen=True)
class BankSpec:
    """
    Feature-extraction bank.

    Attributes:
        n_channels (int): Number of control sets (channels)
        control_seed (int): Seed of the control voltages
        downsample (int): Block-average factor applied to each channel
        per_channel_devices (bool): Use a different device per channel
    """
    n_channels: int = 16
    control_seed: int = 0
    downsample: int = 10
    per_channel_devices: bool = False

    def __post_init__(self):
        if self.n_channels < 1:
            raise ValueError(f"n_channels must be at least 1, got {self.n_channels}")
        if self.downsample < 1:
            raise ValueError(f"downsample must be at least 1, got {self.downsample}")


@dataclass(frozen=True)
class FeatureMatrix:
    """
    Channels x frames matrix of one input.

    Attributes:
        values (ndarray): Read-only float64 (channels, frames)
        frame_rate (float): Frames per second
        provenance (dict): device_seed, control_seed, downsample, source
    """
    values: np.ndarray
    frame_rate: float
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, copy=True)
        if values.ndim != 2 or values.shape[0] < 1:
            raise ValueError(f"FeatureMatrix needs a (channels>=1, frames) array, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("feature values must be finite")
        if not self.frame_rate > 0:
            raise ValueError(f"frame_rate must be positive, got {self.frame_rate}")
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)
        object.__setattr__(self, 'frame_rate', float(self.frame_rate))
        object.__setattr__(self, 'provenance', dict(self.provenance))

    @property
    def channels(self):
        return int(self.values.shape[0])

    @property
    def frames(self):
        return int(self.values.shape[1])

    def __eq__(self, other):
        if not isinstance(other, FeatureMatrix):
            return NotImplemented
        return (self.values.shape == other.values.shape
                and np.array_equal(self.values.view(np.uint64), other.values.view(np.uint64))
                and self.frame_rate == other.frame_rate
                and self.provenance == other.provenance)

    __hash__ = None


@dataclass
class FeatureDataset:
    """
    Features of a labelled collection, ready for the classifier.

    Attributes:
        values (ndarray): (items, channels, frames)
        labels (ndarray): Class index per item
        frame_rate (float): Frames per second
        class_names (list): Label names
        train_index (ndarray): Training split indices
        test_index (ndarray): Test split indices
        provenance (dict): How the features were made
    """
    values: np.ndarray
    labels: np.ndarray
    frame_rate: float
    class_names: List[str]
    train_index: np.ndarray
    test_index: np.ndarray
    provenance: dict = field(default_factory=dict)
    normalizer: Optional[dict] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.train_index = np.asarray([] if self.train_index is None else self.train_index, dtype=np.int64)
        self.test_index = np.asarray([] if self.test_index is None else self.test_index, dtype=np.int64)
        if self.values.ndim != 3:
            raise ValueError(f"feature dataset values must be 3-D, got {self.values.shape}")
        if self.values.shape[0] != self.labels.size:
            raise ValueError("values and labels disagree on the item count")

    @property
    def channels(self):
        return int(self.values.shape[1])

    @property
    def frames(self):
        return int(self.values.shape[2])

    @property
    def n_classes(self):
        return len(self.class_names)

    def train(self):
        return self.values[self.train_index], self.labels[self.train_index]

    def test(self):
        return self.values[self.test_index], self.labels[self.test_index]

    def matrix(self, i):
        return FeatureMatrix(self.values[i], self.frame_rate, self.provenance)
