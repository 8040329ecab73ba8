import logging

import numpy as np

from exceptions import ShapeMismatch
from net.arch import ArchSpec
from net.layers import Activation, BatchNorm, Conv1d, GlobalAvgPool, Linear, MatrixLayer, MaxPool

logger = logging.getLogger(__name__)


def _make_layer(spec):
    if spec.type == 'conv1d':
        return Conv1d(spec.in_ch, spec.out_ch, spec.kernel, spec.stride)
    if spec.type == 'batchnorm':
        return BatchNorm(spec.channels)
    if spec.type == 'activation':
        return Activation(spec.fn)
    if spec.type == 'maxpool':
        return MaxPool(spec.width)
    if spec.type == 'globalavgpool':
        return GlobalAvgPool()
    return Linear(spec.in_features, spec.out_features)


class CnnModel:
    """
    Layer stack built from an ArchSpec, holding every learnable tensor.

    Attributes:
        arch (ArchSpec): Architecture the layers were built from
        layers (list): Layer instances in forward order
        init_seed (int): Seed of the weight initialization
    """

    def __init__(self, arch: ArchSpec, layers, init_seed=0):
        self.arch = arch
        self.layers = layers
        self.init_seed = init_seed

    @property
    def matrix_layers(self):
        """Conv and linear layers with their index in the stack."""
        return [(i, layer) for i, layer in enumerate(self.layers) if isinstance(layer, MatrixLayer)]

    def parameters(self):
        """Every learnable tensor in a fixed order (layer order, then name order)."""
        return [layer.params[name] for layer in self.layers for name in sorted(layer.params)]

    def gradients(self):
        return [layer.grads[name] for layer in self.layers for name in sorted(layer.params)]

    def named_tensors(self):
        """Learnable tensors plus batchnorm running statistics, keyed '<index>.<name>'."""
        tensors = {}
        for i, layer in enumerate(self.layers):
            for name in sorted(layer.params):
                tensors[f"{i}.{name}"] = layer.params[name]
            if isinstance(layer, BatchNorm):
                tensors[f"{i}.running_mean"] = layer.running_mean
                tensors[f"{i}.running_var"] = layer.running_var
        return tensors

    def load_tensors(self, tensors):
        for key, value in tensors.items():
            index, name = key.split('.', 1)
            layer = self.layers[int(index)]
            value = np.asarray(value, dtype=np.float64)
            if name in ('running_mean', 'running_var'):
                setattr(layer, name, value.copy())
                continue
            if layer.params[name].shape != value.shape:
                raise ShapeMismatch(f"tensor '{key}' has shape {value.shape}, layer expects {layer.params[name].shape}")
            layer.params[name][...] = value

    def n_params(self, include_batchnorm=True):
        return sum(layer.n_params() for layer in self.layers
                   if include_batchnorm or not isinstance(layer, BatchNorm))

    def zero_grad(self):
        for layer in self.layers:
            layer.zero_grad()

    def forward(self, x, training=False, ctx=None):
        """
        Logits for a batch.

        Args:
            x (ndarray): (N, channels, frames), or (N, features) for a pure linear model
            training (bool): Use batch statistics and keep the activation cache
            ctx: Optional hardware context with prepare/finish hooks for every MVM

        Returns:
            ndarray: (N, n_classes) logits
        """
        x = np.asarray(x, dtype=np.float64)
        expected = self.arch.input_channels
        if expected is not None and (x.ndim != 3 or x.shape[1] != expected):
            raise ShapeMismatch(f"model '{self.arch.name}' expects (N, {expected}, L) input, got {x.shape}")
        for layer in self.layers:
            x = layer.forward(x, training=training, ctx=ctx)
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def predict(self, x, batch_size=256):
        x = np.asarray(x, dtype=np.float64)
        out = [self.forward(x[i:i + batch_size]) for i in range(0, len(x), batch_size)]
        return np.concatenate(out, axis=0).argmax(axis=1)

    def copy(self):
        clone = build(self.arch, self.init_seed)
        clone.load_tensors({k: v.copy() for k, v in self.named_tensors().items()})
        return clone

    def is_finite(self):
        return all(np.all(np.isfinite(p)) for p in self.parameters())


def build(arch: ArchSpec, init_seed=0, input_len=None):
    """
    Instantiate an architecture with Kaiming-uniform fan-in initialization.

    Weights of conv and linear layers are drawn from U(-sqrt(6/fan_in), sqrt(6/fan_in))
    in layer order from one generator; biases and batchnorm beta start at zero,
    batchnorm gamma at one.

    Args:
        arch (ArchSpec): Architecture
        init_seed (int): Seed of the initialization
        input_len (int, optional): Frames per input; when given, every layer length is checked

    Returns:
        CnnModel
    """
    if input_len is not None and arch.layers:
        arch.output_shapes(input_len)
    rng = np.random.default_rng(init_seed)
    layers = [_make_layer(spec) for spec in arch.layers]
    for layer in layers:
        if isinstance(layer, MatrixLayer):
            bound = np.sqrt(6.0 / layer.fan_in)
            layer.params['W'][...] = rng.uniform(-bound, bound, size=layer.params['W'].shape)
    model = CnnModel(arch, layers, init_seed)
    logger.debug(f"Built '{arch.name}' with {model.n_params()} parameters (seed {init_seed})")
    return model

