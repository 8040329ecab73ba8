import logging
import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from net.model import CnnModel
from net.train import TrainConfig, train

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class HwaConfig:
    """
    Analogue non-idealities injected during retraining and emulated at inference.

    Attributes:
        weight_noise_frac (float): Weight noise sigma as a fraction of the layer's max |W|
        mvm_out_noise_sigma (float): Additive Gaussian noise on every MVM output
        clip_factor (float): Weights and biases are clipped to +-clip_factor * sigma_W after each batch
        input_bits (int): Input quantization bits, None for full precision
        output_bits (int): Output quantization bits of a calibrated tile, None for full precision
        seed (int): Seed of the injected noise
    """
    weight_noise_frac: float = 0.12
    mvm_out_noise_sigma: float = 0.1
    clip_factor: float = 1.5
    input_bits: Optional[int] = 8
    output_bits: Optional[int] = 8
    seed: int = 0

    def __post_init__(self):
        for name in ('weight_noise_frac', 'mvm_out_noise_sigma', 'clip_factor'):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be non-negative, got {getattr(self, name)}")
        for name in ('input_bits', 'output_bits'):
            bits = getattr(self, name)
            if bits is not None and not 2 <= bits <= 16:
                raise ValueError(f"{name} must lie in [2, 16] or be None, got {bits}")

    @classmethod
    def noiseless(cls, seed=0):
        """All non-idealities off: digital behaviour."""
        return cls(weight_noise_frac=0.0, mvm_out_noise_sigma=0.0, clip_factor=math.inf,
                   input_bits=None, output_bits=None, seed=seed)

    @property
    def injects_noise(self):
        return self.weight_noise_frac > 0 or self.mvm_out_noise_sigma > 0 or self.input_bits is not None

    def to_dict(self):
        return asdict(self)


def quantize(x, bits, limit=None, axis=None):
    """
    Symmetric uniform quantization to `bits` over [-limit, limit].

    Args:
        x (ndarray): Values
        bits (int): Bit width; None returns x unchanged
        limit (float or ndarray, optional): Range; defaults to max |x| along `axis`
        axis (int, optional): Reduce the range per slice instead of over the whole tensor

    Returns:
        ndarray: Quantized values, clipped to the range
    """
    if bits is None:
        return x
    if limit is None:
        limit = np.max(np.abs(x), axis=axis, keepdims=axis is not None)
    limit = np.asarray(limit, dtype=np.float64)
    levels = 2 ** (bits - 1) - 1
    safe = np.where(limit > 0, limit, 1.0)
    step = safe / levels
    q = np.round(np.clip(x, -safe, safe) / step) * step
    return np.where(limit > 0, q, x)


class HwaContext:
    """
    Hardware context for MatrixLayer forward passes during retraining.

    Inputs are quantized per tensor, the weight matrix receives fresh Gaussian noise
    of sigma weight_noise_frac * max|W|, and the MVM result gets additive output noise.
    The stored weights are never modified.
    """

    def __init__(self, hwa: HwaConfig, seed=None):
        self.hwa = hwa
        self.rng = np.random.default_rng(hwa.seed if seed is None else seed)

    def prepare(self, layer, inputs_2d, matrix):
        if self.hwa.input_bits is not None:
            inputs_2d = quantize(inputs_2d, self.hwa.input_bits)
        if self.hwa.weight_noise_frac > 0:
            sigma = self.hwa.weight_noise_frac * np.max(np.abs(matrix))
            matrix = matrix + self.rng.normal(0.0, sigma, size=matrix.shape)
        return inputs_2d, matrix

    def finish(self, layer, y):
        if self.hwa.mvm_out_noise_sigma > 0:
            y = y + self.rng.normal(0.0, self.hwa.mvm_out_noise_sigma, size=y.shape)
        return y


def clip_weights(model: CnnModel, clip_factor):
    """
    Clip weights and biases of every conv/linear layer to +-clip_factor * sigma_W.

    Returns:
        list: (layer index, sigma_W, bound) per layer, sigma_W taken before clipping
    """
    records = []
    for index, layer in model.matrix_layers:
        sigma = float(np.std(layer.params['W']))
        bound = clip_factor * sigma
        np.clip(layer.params['W'], -bound, bound, out=layer.params['W'])
        np.clip(layer.params['b'], -bound, bound, out=layer.params['b'])
        records.append((index, sigma, bound))
    return records


def hwa_retrain(model: CnnModel, dataset, hwa: HwaConfig, cfg: TrainConfig, on_clip=None):
    """
    Retrain a full-precision model under injected analogue non-idealities.

    The source model is left untouched; retraining runs on a copy. With every
    non-ideality off and an infinite clip factor the run is identical to `train`.

    Args:
        model (CnnModel): Full-precision trained model
        dataset: FeatureDataset or (train, test) pair
        hwa (HwaConfig): Noise, clipping and quantization settings
        cfg (TrainConfig): Optimizer settings of the retraining phase
        on_clip (callable): Called with the clip records after every batch

    Returns:
        tuple: (retrained CnnModel, history DataFrame)
    """
    retrained = model.copy()
    ctx = HwaContext(hwa) if hwa.injects_noise else None

    after_batch = None
    if math.isfinite(hwa.clip_factor):
        def after_batch(m):
            records = clip_weights(m, hwa.clip_factor)
            if on_clip is not None:
                on_clip(records)

    logger.info(f"Hardware-aware retraining: weight noise {hwa.weight_noise_frac}, "
                f"output noise {hwa.mvm_out_noise_sigma}, clip {hwa.clip_factor} sigma_W, "
                f"input bits {hwa.input_bits}")
    return train(retrained, dataset, cfg, ctx=ctx, after_batch=after_batch)
