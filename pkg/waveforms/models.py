import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd


def _frozen_array(values, dtype=np.float64):
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Waveform:
    """
    Uniformly sampled voltage trace.

    Attributes:
        samples (ndarray): Voltages in V, read-only float64
        sample_rate (float): Samples per second
    """
    samples: np.ndarray
    sample_rate: float

    def __post_init__(self):
        samples = _frozen_array(self.samples)
        if samples.ndim != 1:
            raise ValueError(f"Waveform samples must be 1-D, got shape {samples.shape}")
        if samples.size < 1:
            raise ValueError("Waveform must contain at least one sample")
        if not np.all(np.isfinite(samples)):
            raise ValueError("Waveform samples must be finite")
        if not (self.sample_rate > 0 and math.isfinite(self.sample_rate)):
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, 'samples', samples)
        object.__setattr__(self, 'sample_rate', float(self.sample_rate))

    def __len__(self):
        return int(self.samples.size)

    @property
    def duration(self):
        return len(self) / self.sample_rate

    @property
    def times(self):
        return np.arange(len(self)) / self.sample_rate

    def with_samples(self, samples):
        return Waveform(samples, self.sample_rate)

    def to_frame(self):
        """Return the trace as a DataFrame with `t_s,v` columns."""
        return pd.DataFrame({'t_s': self.times, 'v': self.samples})


@dataclass(frozen=True)
class Spectrum:
    """
    One-sided power spectral density.

    Attributes:
        frequencies (ndarray): Bin centres in Hz, strictly increasing
        power_db (ndarray): Power in dB relative to 1 V^2/Hz
        window (str): Description of the estimator settings
    """
    frequencies: np.ndarray
    power_db: np.ndarray
    window: str = 'hann'

    def __post_init__(self):
        freqs = _frozen_array(self.frequencies)
        power = _frozen_array(self.power_db)
        if freqs.shape != power.shape:
            raise ValueError("frequencies and power_db must have the same length")
        if freqs.size > 1 and not np.all(np.diff(freqs) > 0):
            raise ValueError("frequencies must be strictly increasing")
        object.__setattr__(self, 'frequencies', freqs)
        object.__setattr__(self, 'power_db', power)

    def __len__(self):
        return int(self.frequencies.size)

    @property
    def resolution(self):
        if len(self) < 2:
            return 0.0
        return float(self.frequencies[1] - self.frequencies[0])

    @property
    def power_linear(self):
        return np.power(10.0, self.power_db / 10.0)

    def nearest_bin(self, frequency):
        return int(np.argmin(np.abs(self.frequencies - frequency)))

    def to_frame(self):
        return pd.DataFrame({'freq_hz': self.frequencies, 'power_db': self.power_db})


@dataclass(frozen=True)
class ChirpParams:
    """
    Exponential chirp parameters.

    Attributes:
        A (float): Amplitude in V
        f0 (float): Start frequency in Hz
        f1 (float): End frequency in Hz
        T (float): Duration in s
        phi0 (float): Initial phase in rad
    """
    A: float = 0.75
    f0: float = 100.0
    f1: float = 2000.0
    T: float = 1.0
    phi0: float = -math.pi / 2

    def __post_init__(self):
        for name in ('A', 'f0', 'f1', 'T', 'phi0'):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"Chirp parameter {name} must be finite")
        if self.A <= 0:
            raise ValueError(f"Chirp amplitude must be positive, got {self.A}")
        if self.T <= 0:
            raise ValueError(f"Chirp duration must be positive, got {self.T}")
        if not self.f1 > self.f0 > 0:
            raise ValueError(f"Chirp requires f1 > f0 > 0, got f0={self.f0}, f1={self.f1}")

    @property
    def k(self):
        """Rate of exponential change in frequency, (f1/f0)^(1/T)."""
        return (self.f1 / self.f0) ** (1.0 / self.T)

    @property
    def log_k(self):
        return math.log(self.f1 / self.f0) / self.T


@dataclass
class LabeledWaveforms:
    """
    Collection of labelled waveforms with an optional train/test split.

    Attributes:
        waveforms (list): Waveform objects
        labels (ndarray): Integer class index per waveform
        class_names (list): Label name per class index
        train_index (ndarray, optional): Indices of the training split
        test_index (ndarray, optional): Indices of the test split
    """
    waveforms: List[Waveform]
    labels: np.ndarray
    class_names: List[str]
    train_index: Optional[np.ndarray] = None
    test_index: Optional[np.ndarray] = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.waveforms) != self.labels.size:
            raise ValueError("waveforms and labels must have the same length")

    def __len__(self):
        return len(self.waveforms)

    @property
    def n_classes(self):
        return len(self.class_names)

    def subset(self, index):
        index = np.asarray(index, dtype=np.int64)
        return LabeledWaveforms(
            waveforms=[self.waveforms[i] for i in index],
            labels=self.labels[index],
            class_names=list(self.class_names),
            metadata=dict(self.metadata),
        )

    def splits(self) -> Tuple['LabeledWaveforms', 'LabeledWaveforms']:
        if self.train_index is None or self.test_index is None:
            raise ValueError("Collection has no train/test split")
        return self.subset(self.train_index), self.subset(self.test_index)

    def as_matrix(self):
        """Stack equal-length waveforms into a (n, samples) array."""
        if not self.waveforms:
            return np.zeros((0, 0))
        lengths = {len(w) for w in self.waveforms}
        if len(lengths) != 1:
            raise ValueError(f"Waveforms have unequal lengths {sorted(lengths)}; apply fit_length first")
        return np.stack([w.samples for w in self.waveforms])

    @property
    def sample_rate(self):
        return self.waveforms[0].sample_rate if self.waveforms else None
