import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from exceptions import ShapeMismatch

BN_MOMENTUM = 0.1
BN_EPS = 1e-5
ACTIVATIONS = ('tanh', 'swish', 'log_sigmoid')


class Layer:
    """Base class; parameterless layers only override forward/backward."""

    kind = 'layer'
    trainable = ()

    def __init__(self):
        self.params = {}
        self.grads = {}
        self._cache = None

    def zero_grad(self):
        for name, value in self.params.items():
            self.grads[name] = np.zeros_like(value)

    def n_params(self):
        return int(sum(p.size for p in self.params.values()))

    def forward(self, x, training=False, ctx=None):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError


class MatrixLayer(Layer):
    """
    Layer whose core is one matrix product inputs_2d @ M, M of shape (in_features, out).

    A hardware context may quantize the inputs, perturb M and add noise to the
    product before the bias. Gradients reach the stored weights unchanged.
    """

    def weight_matrix(self):
        raise NotImplementedError

    def _matmul(self, inputs_2d, ctx):
        matrix = self.weight_matrix()
        if ctx is not None:
            inputs_2d, matrix = ctx.prepare(self, inputs_2d, matrix)
        out = inputs_2d @ matrix
        if ctx is not None:
            out = ctx.finish(self, out)
        return out + self.params['b'], inputs_2d, matrix


class Conv1d(MatrixLayer):
    """Valid-mode 1-D cross-correlation, weights (out_ch, in_ch, kernel)."""

    kind = 'conv1d'

    def __init__(self, in_ch, out_ch, kernel, stride=1):
        super().__init__()
        self.in_ch, self.out_ch, self.kernel, self.stride = int(in_ch), int(out_ch), int(kernel), int(stride)
        self.params = {
            'W': np.zeros((self.out_ch, self.in_ch, self.kernel)),
            'b': np.zeros(self.out_ch),
        }
        self.zero_grad()

    @property
    def fan_in(self):
        return self.in_ch * self.kernel

    def output_length(self, length):
        return (length - self.kernel) // self.stride + 1

    def weight_matrix(self):
        """(in_ch*kernel, out_ch); row c*kernel + k holds W[:, c, k]."""
        return self.params['W'].reshape(self.out_ch, -1).T

    def im2col(self, x):
        """
        Sliding windows of x (N, C, L) as rows, shape (N*L_out, C*kernel).
        """
        if x.ndim != 3 or x.shape[1] != self.in_ch:
            raise ShapeMismatch(f"conv1d expects (N, {self.in_ch}, L), got {x.shape}")
        if x.shape[2] < self.kernel:
            raise ShapeMismatch(f"input length {x.shape[2]} shorter than kernel {self.kernel}")
        windows = sliding_window_view(x, self.kernel, axis=2)[:, :, ::self.stride, :]
        n, _, l_out, _ = windows.shape
        return windows.transpose(0, 2, 1, 3).reshape(n * l_out, self.in_ch * self.kernel), l_out

    def forward(self, x, training=False, ctx=None):
        cols, l_out = self.im2col(x)
        out, used_cols, used_matrix = self._matmul(cols, ctx)
        n = x.shape[0]
        self._cache = (x.shape, used_cols, used_matrix, l_out)
        return out.reshape(n, l_out, self.out_ch).transpose(0, 2, 1)

    def backward(self, grad):
        x_shape, cols, matrix, l_out = self._cache
        n = x_shape[0]
        g = grad.transpose(0, 2, 1).reshape(n * l_out, self.out_ch)
        self.grads['W'] += (cols.T @ g).T.reshape(self.params['W'].shape)
        self.grads['b'] += g.sum(axis=0)

        dcols = (g @ matrix.T).reshape(n, l_out, self.in_ch, self.kernel)
        dx = np.zeros(x_shape)
        span = self.stride * (l_out - 1) + 1
        for k in range(self.kernel):
            dx[:, :, k:k + span:self.stride] += dcols[:, :, :, k].transpose(0, 2, 1)
        return dx


class Linear(MatrixLayer):
    """Fully connected layer, weights (out, in); trailing input dims are flattened."""

    kind = 'linear'

    def __init__(self, in_features, out_features):
        super().__init__()
        self.in_features, self.out_features = int(in_features), int(out_features)
        self.params = {
            'W': np.zeros((self.out_features, self.in_features)),
            'b': np.zeros(self.out_features),
        }
        self.zero_grad()

    @property
    def fan_in(self):
        return self.in_features

    def weight_matrix(self):
        return self.params['W'].T

    def flatten(self, x):
        flat = x.reshape(x.shape[0], -1)
        if flat.shape[1] != self.in_features:
            raise ShapeMismatch(f"linear expects {self.in_features} features, got {flat.shape[1]}")
        return flat

    def forward(self, x, training=False, ctx=None):
        flat = self.flatten(x)
        out, used_inputs, used_matrix = self._matmul(flat, ctx)
        self._cache = (x.shape, used_inputs, used_matrix)
        return out

    def backward(self, grad):
        x_shape, inputs, matrix = self._cache
        self.grads['W'] += grad.T @ inputs
        self.grads['b'] += grad.sum(axis=0)
        return (grad @ matrix.T).reshape(x_shape)


class BatchNorm(Layer):
    """Per-channel batch normalization over (N, C) or (N, C, L) inputs."""

    kind = 'batchnorm'

    def __init__(self, channels, momentum=BN_MOMENTUM, eps=BN_EPS):
        super().__init__()
        self.channels = int(channels)
        self.momentum = momentum
        self.eps = eps
        self.params = {'gamma': np.ones(self.channels), 'beta': np.zeros(self.channels)}
        self.running_mean = np.zeros(self.channels)
        self.running_var = np.ones(self.channels)
        self.zero_grad()

    def _axes(self, x):
        if x.ndim not in (2, 3) or x.shape[1] != self.channels:
            raise ShapeMismatch(f"batchnorm expects (N, {self.channels}[, L]), got {x.shape}")
        return (0,) if x.ndim == 2 else (0, 2)

    def _bcast(self, v, ndim):
        return v[None, :] if ndim == 2 else v[None, :, None]

    def forward(self, x, training=False, ctx=None):
        axes = self._axes(x)
        if training:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            count = x.size // self.channels
            unbiased = var * count / max(count - 1, 1)
            self.running_mean = (1.0 - self.momentum) * self.running_mean + self.momentum * mean
            self.running_var = (1.0 - self.momentum) * self.running_var + self.momentum * unbiased
        else:
            mean, var = self.running_mean, self.running_var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        x_hat = (x - self._bcast(mean, x.ndim)) * self._bcast(inv_std, x.ndim)
        self._cache = (x_hat, inv_std, axes, training)
        return self._bcast(self.params['gamma'], x.ndim) * x_hat + self._bcast(self.params['beta'], x.ndim)

    def backward(self, grad):
        x_hat, inv_std, axes, training = self._cache
        ndim = grad.ndim
        self.grads['gamma'] += np.sum(grad * x_hat, axis=axes)
        self.grads['beta'] += np.sum(grad, axis=axes)
        g_hat = grad * self._bcast(self.params['gamma'], ndim)
        if not training:
            return g_hat * self._bcast(inv_std, ndim)
        count = grad.size // self.channels
        sum_g = self._bcast(np.sum(g_hat, axis=axes), ndim)
        sum_gx = self._bcast(np.sum(g_hat * x_hat, axis=axes), ndim)
        return self._bcast(inv_std, ndim) / count * (count * g_hat - sum_g - x_hat * sum_gx)


def activate(kind, x):
    if kind == 'tanh':
        return np.tanh(x)
    if kind == 'swish':
        return x * expit(x)
    if kind == 'log_sigmoid':
        return -np.logaddexp(0.0, -x)
    raise ValueError(f"activation must be one of {ACTIVATIONS}, got {kind!r}")


def activate_grad(kind, x):
    if kind == 'tanh':
        t = np.tanh(x)
        return 1.0 - t * t
    if kind == 'swish':
        s = expit(x)
        return s + x * s * (1.0 - s)
    if kind == 'log_sigmoid':
        return expit(-x)
    raise ValueError(f"activation must be one of {ACTIVATIONS}, got {kind!r}")


class Activation(Layer):
    kind = 'activation'

    def __init__(self, fn):
        super().__init__()
        if fn not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}, got {fn!r}")
        self.fn = fn

    def forward(self, x, training=False, ctx=None):
        self._cache = x
        return activate(self.fn, x)

    def backward(self, grad):
        return grad * activate_grad(self.fn, self._cache)


class MaxPool(Layer):
    """Non-overlapping max pooling along time; a trailing partial window is dropped."""

    kind = 'maxpool'

    def __init__(self, width):
        super().__init__()
        self.width = int(width)

    def output_length(self, length):
        return length // self.width

    def forward(self, x, training=False, ctx=None):
        if x.ndim != 3:
            raise ShapeMismatch(f"maxpool expects (N, C, L), got {x.shape}")
        n, c, length = x.shape
        l_out = length // self.width
        if l_out < 1:
            raise ShapeMismatch(f"input length {length} shorter than pool width {self.width}")
        blocks = x[:, :, :l_out * self.width].reshape(n, c, l_out, self.width)
        arg = blocks.argmax(axis=3)
        self._cache = (x.shape, arg, l_out)
        return np.take_along_axis(blocks, arg[..., None], axis=3)[..., 0]

    def backward(self, grad):
        x_shape, arg, l_out = self._cache
        n, c, _ = x_shape
        blocks = np.zeros((n, c, l_out, self.width))
        np.put_along_axis(blocks, arg[..., None], grad[..., None], axis=3)
        dx = np.zeros(x_shape)
        dx[:, :, :l_out * self.width] = blocks.reshape(n, c, l_out * self.width)
        return dx


class GlobalAvgPool(Layer):
    """Mean over time, (N, C, L) -> (N, C)."""

    kind = 'globalavgpool'

    def forward(self, x, training=False, ctx=None):
        if x.ndim != 3:
            raise ShapeMismatch(f"global average pool expects (N, C, L), got {x.shape}")
        self._cache = x.shape
        return x.mean(axis=2)

    def backward(self, grad):
        shape = self._cache
        return np.broadcast_to(grad[:, :, None] / shape[2], shape).copy()
