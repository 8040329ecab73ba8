import logging
from dataclasses import dataclass, field
from typing import List, Optional

from exceptions import ShapeMismatch
from net.layers import ACTIVATIONS

logger = logging.getLogger(__name__)

LAYER_TYPES = ('conv1d', 'batchnorm', 'activation', 'maxpool', 'globalavgpool', 'linear')
HEADS = ('log_softmax', 'log_sigmoid')


@dataclass(frozen=True)
class LayerSpec:
    """
    One layer descriptor.

    Attributes:
        type (str): One of LAYER_TYPES
        in_ch, out_ch, kernel, stride: conv1d geometry
        channels: batchnorm width
        fn: activation name
        width: maxpool width
        in_features, out_features: linear geometry
    """
    type: str
    in_ch: int = 0
    out_ch: int = 0
    kernel: int = 0
    stride: int = 1
    channels: int = 0
    fn: str = ''
    width: int = 0
    in_features: int = 0
    out_features: int = 0

    def __post_init__(self):
        if self.type not in LAYER_TYPES:
            raise ValueError(f"unknown layer type {self.type!r}")
        if self.type == 'activation' and self.fn not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.fn!r}")

    def to_dict(self):
        keys = {
            'conv1d': ('in_ch', 'out_ch', 'kernel', 'stride'),
            'batchnorm': ('channels',),
            'activation': ('fn',),
            'maxpool': ('width',),
            'globalavgpool': (),
            'linear': ('in_features', 'out_features'),
        }[self.type]
        return dict({'type': self.type}, **{k: getattr(self, k) for k in keys})


def conv(in_ch, out_ch, kernel, stride=1):
    return LayerSpec('conv1d', in_ch=in_ch, out_ch=out_ch, kernel=kernel, stride=stride)


def bn(channels):
    return LayerSpec('batchnorm', channels=channels)


def act(fn):
    return LayerSpec('activation', fn=fn)


def maxpool(width):
    return LayerSpec('maxpool', width=width)


def gap():
    return LayerSpec('globalavgpool')


def linear(in_features, out_features):
    return LayerSpec('linear', in_features=in_features, out_features=out_features)


@dataclass(frozen=True)
class ArchSpec:
    """
    Ordered layer graph of a classifier.

    Attributes:
        name (str): Catalog name or a free label
        layers (list): LayerSpec sequence ending in a linear layer
        head (str): 'log_softmax' or 'log_sigmoid' applied to the logits by the loss
    """
    name: str
    layers: List[LayerSpec] = field(default_factory=list)
    head: str = 'log_softmax'

    def __post_init__(self):
        object.__setattr__(self, 'layers', list(self.layers))
        if self.head not in HEADS:
            raise ValueError(f"head must be one of {HEADS}, got {self.head!r}")
        if self.layers and self.layers[-1].type != 'linear':
            raise ShapeMismatch(f"arch '{self.name}' must end in a linear layer")
        self._check_channels()

    def _check_channels(self):
        channels, flat = None, False
        for i, layer in enumerate(self.layers):
            if layer.type == 'conv1d':
                if flat or (channels is not None and layer.in_ch != channels):
                    raise ShapeMismatch(f"layer {i}: conv expects {layer.in_ch} channels, gets {channels}")
                channels = layer.out_ch
            elif layer.type == 'batchnorm':
                if channels is not None and layer.channels != channels:
                    raise ShapeMismatch(f"layer {i}: batchnorm width {layer.channels} vs {channels} channels")
            elif layer.type == 'globalavgpool':
                flat = True
            elif layer.type == 'linear':
                if flat and channels is not None and layer.in_features != channels:
                    raise ShapeMismatch(f"layer {i}: linear expects {layer.in_features} inputs, gets {channels}")
                channels, flat = layer.out_features, True

    @property
    def input_channels(self):
        for layer in self.layers:
            if layer.type == 'conv1d':
                return layer.in_ch
            if layer.type == 'linear':
                return None
        return None

    @property
    def n_classes(self):
        return self.layers[-1].out_features if self.layers else 0

    def output_shapes(self, input_len, input_channels=None):
        """
        Shape after every layer for one input of `input_len` frames.

        Returns:
            list: (channels, length) per layer; length is None after flattening
        """
        channels = input_channels or self.input_channels
        length = input_len
        shapes = []
        for i, layer in enumerate(self.layers):
            if layer.type == 'conv1d':
                if channels is not None and layer.in_ch != channels:
                    raise ShapeMismatch(f"layer {i}: conv expects {layer.in_ch} channels, gets {channels}")
                if length is None or length < layer.kernel:
                    raise ShapeMismatch(f"layer {i}: input length {length} shorter than kernel {layer.kernel}")
                channels, length = layer.out_ch, (length - layer.kernel) // layer.stride + 1
            elif layer.type == 'batchnorm':
                if layer.channels != channels:
                    raise ShapeMismatch(f"layer {i}: batchnorm width {layer.channels} vs {channels} channels")
            elif layer.type == 'maxpool':
                if length is None or length // layer.width < 1:
                    raise ShapeMismatch(f"layer {i}: length {length} too short for pool width {layer.width}")
                length = length // layer.width
            elif layer.type == 'globalavgpool':
                if length is None:
                    raise ShapeMismatch(f"layer {i}: nothing to pool over")
                length = None
            elif layer.type == 'linear':
                features = channels * (length or 1) if channels is not None else layer.in_features
                if features != layer.in_features:
                    raise ShapeMismatch(f"layer {i}: linear expects {layer.in_features} inputs, gets {features}")
                channels, length = layer.out_features, None
            shapes.append((channels, length))
        return shapes

    def output_lengths(self, input_len):
        return [length for _, length in self.output_shapes(input_len)]

    def to_dict(self):
        return {'name': self.name, 'head': self.head, 'layers': [layer.to_dict() for layer in self.layers]}

    @classmethod
    def from_dict(cls, payload):
        return cls(
            name=payload.get('name', 'custom'),
            layers=[LayerSpec(**layer) for layer in payload['layers']],
            head=payload.get('head', 'log_softmax'),
        )


def count_params(arch: ArchSpec, include_batchnorm=True):
    """Learnable parameters including biases (and batchnorm gamma/beta)."""
    total = 0
    for layer in arch.layers:
        if layer.type == 'conv1d':
            total += layer.in_ch * layer.out_ch * layer.kernel + layer.out_ch
        elif layer.type == 'linear':
            total += layer.in_features * layer.out_features + layer.out_features
        elif layer.type == 'batchnorm' and include_batchnorm:
            total += 2 * layer.channels
    return total


def count_macs(arch: ArchSpec, input_len):
    """Multiply-accumulates of one forward pass; pooling and activations are free."""
    if not arch.layers:
        return 0
    shapes = arch.output_shapes(input_len)
    total = 0
    for layer, (_, length) in zip(arch.layers, shapes):
        if layer.type == 'conv1d':
            total += layer.in_ch * layer.out_ch * layer.kernel * length
        elif layer.type == 'linear':
            total += layer.in_features * layer.out_features
    return total


def head_arch(n_channels, n_classes=10, hidden=32, kernel=8, fn='tanh'):
    """One conv layer, global average pool and a linear classifier."""
    return ArchSpec(
        name=f"head-{n_channels}",
        layers=[conv(n_channels, hidden, kernel), act(fn), gap(), linear(hidden, n_classes)],
    )


def linear_arch(n_inputs, n_classes=10, name='linear'):
    return ArchSpec(name=name, layers=[linear(n_inputs, n_classes)], head='log_sigmoid')


def ti46_aimc_arch(n_channels=64, n_classes=10, fn='tanh'):
    return ArchSpec(
        name='ti46-aimc',
        layers=[
            conv(n_channels, 96, 8), bn(96), act(fn), maxpool(4),
            conv(96, 96, 3), bn(96), act(fn), maxpool(4),
            conv(96, 36, 3), bn(36), act(fn), gap(),
            linear(36, n_classes),
        ],
    )


def ti46_aimc_2layer_arch(n_channels=64, n_classes=10, fn='tanh'):
    return ArchSpec(
        name='ti46-aimc-2layer',
        layers=[
            conv(n_channels, 32, 8), bn(32), act(fn), maxpool(4),
            conv(32, 32, 3), bn(32), act(fn), gap(),
            linear(32, n_classes),
        ],
    )


def gsc_6layer_arch(n_channels=64, n_classes=12, fn='tanh'):
    """Four conv layers and two fully connected layers, mapped onto 18 cores."""
    return ArchSpec(
        name='gsc-6layer' if fn == 'tanh' else f"gsc-6layer-{fn}",
        layers=[
            conv(n_channels, 96, 8), bn(96), act(fn), maxpool(4),
            conv(96, 342, 3), bn(342), act(fn), maxpool(4),
            conv(342, 200, 3), bn(200), act(fn), maxpool(4),
            conv(200, 128, 3), bn(128), act(fn), gap(),
            linear(128, 300), act(fn),
            linear(300, n_classes),
        ],
    )


CATALOG = (
    'linear-raw', 'linear-dnpu-<N>', 'cnn1-raw', 'head-<N>',
    'ti46-aimc', 'ti46-aimc-2layer', 'gsc-6layer', 'gsc-6layer-swish',
)


def catalog(name, n_channels=None, input_len=None, n_classes=None):
    """
    Look up an architecture by name.

    Args:
        name (str): Catalog entry, e.g. 'head-16' or 'linear-dnpu-16'
        n_channels (int, optional): Input channels where the entry leaves them open
        input_len (int, optional): Frames per input, needed by the linear entries
        n_classes (int, optional): Classes; defaults to 10 (12 for the GSC entries)

    Returns:
        ArchSpec
    """
    classes = n_classes or (12 if name.startswith('gsc') else 10)
    if name == 'linear-raw':
        return linear_arch((input_len or 12500) * (n_channels or 1), classes, name)
    if name.startswith('linear-dnpu-'):
        channels = int(name.rsplit('-', 1)[1])
        if input_len is None:
            raise ValueError(f"'{name}' needs the input length")
        return linear_arch(channels * input_len, classes, name)
    if name == 'cnn1-raw':
        spec = head_arch(1, classes)
        return ArchSpec('cnn1-raw', spec.layers, spec.head)
    if name.startswith('head-'):
        return head_arch(int(name.split('-', 1)[1]), classes)
    if name == 'ti46-aimc':
        return ti46_aimc_arch(n_channels or 64, classes)
    if name == 'ti46-aimc-2layer':
        return ti46_aimc_2layer_arch(n_channels or 64, classes)
    if name == 'gsc-6layer':
        return gsc_6layer_arch(n_channels or 64, classes)
    if name == 'gsc-6layer-swish':
        return gsc_6layer_arch(n_channels or 64, classes, fn='swish')
    raise ValueError(f"unknown architecture {name!r}; known: {', '.join(CATALOG)}")
