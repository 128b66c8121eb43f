"""Parameterized layers with explicit forward/backward passes.

Layers cache whatever the adjoint needs during ``forward`` and accumulate
parameter gradients into ``Parameter.grad`` during ``backward``; ``backward``
returns the gradient with respect to the layer input. One forward must
precede each backward. Parameters are plain float64 arrays by default.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .errors import GeometryError


class Parameter:
    """A learnable array and its accumulated gradient."""

    __slots__ = ("data", "grad")

    def __init__(self, data):
        self.data = np.asarray(data)
        self.grad = np.zeros_like(self.data)

    @property
    def size(self):
        return self.data.size


class Module:
    """Base for layers and layer compositions.

    Parameter discovery walks instance attributes in definition order,
    recursing into child modules, lists, and dicts, which keeps census,
    checkpoint, and update order deterministic.
    """

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            path = prefix + name
            yield from _walk(path, value)

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad.fill(0.0)

    def parameter_total(self):
        return sum(p.size for p in self.parameters())

    def cast_(self, dtype):
        """Convert all parameters in place (the benchmark path uses float32)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = np.zeros_like(p.data)
        return self


def _walk(path, value):
    if isinstance(value, Parameter):
        yield path, value
    elif isinstance(value, Module):
        yield from value.named_parameters(path + ".")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk(f"{path}.{i}", item)
    elif isinstance(value, dict):
        for key in sorted(value):
            yield from _walk(f"{path}.{key}", value[key])


def _uniform_init(rng, shape, fan_in, gain=1.0):
    bound = gain * np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Conv2d(Module):
    """Standard cross-correlation layer, bias off by default.

    ``init`` selects the weight scheme: ``"he"`` (gain sqrt(6), for ReLU
    hosts), ``"fan_in"`` (gain 1), or ``"zero"``.
    """

    def __init__(self, in_channels, out_channels, kernel_size, stride=1,
                 padding=0, bias=False, init="he", rng=None):
        rng = rng if rng is not None else np.random.default_rng()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = (kernel_size, kernel_size)
        self.stride = stride
        self.padding = padding
        fan_in = in_channels * kernel_size * kernel_size
        shape = (out_channels, in_channels, kernel_size, kernel_size)
        if init == "zero":
            w = np.zeros(shape)
        elif init == "fan_in":
            w = _uniform_init(rng, shape, fan_in)
        elif init == "he":
            w = _uniform_init(rng, shape, fan_in, gain=np.sqrt(6.0))
        else:
            raise ValueError(f"unknown init {init!r}")
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(out_channels)) if bias else None
        self._cache = None

    def forward(self, x):
        c_out = self.out_channels
        if x.shape[1] != self.in_channels:
            raise GeometryError(
                f"input has {x.shape[1]} channels, layer expects {self.in_channels}"
            )
        h_out, w_out = ops.conv_output_hw(
            x.shape[2], x.shape[3], self.kernel, self.stride, self.padding)
        cols = ops.unfold(x, self.kernel, self.stride, self.padding)
        y = np.matmul(self.weight.data.reshape(c_out, -1), cols)
        if self.bias is not None:
            y = y + self.bias.data[:, None]
        self._cache = (x.shape, cols)
        return ops.fold_to_grid(y, (h_out, w_out))

    def backward(self, grad_out):
        x_shape, cols = self._cache
        b = x_shape[0]
        c_out = self.out_channels
        gy = grad_out.reshape(b, c_out, -1)
        self.weight.grad += np.tensordot(
            gy, cols, axes=([0, 2], [0, 2])).reshape(self.weight.data.shape)
        if self.bias is not None:
            self.bias.grad += gy.sum(axis=(0, 2))
        grad_cols = np.matmul(self.weight.data.reshape(c_out, -1).T, gy)
        return ops.unfold_backward(
            grad_cols, x_shape, self.kernel, self.stride, self.padding)


class Linear(Module):
    """Fully connected layer ``y = x W^T + b`` on ``[B, in]`` inputs."""

    def __init__(self, in_features, out_features, bias=True, rng=None):
        rng = rng if rng is not None else np.random.default_rng()
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Parameter(
            _uniform_init(rng, (out_features, in_features), in_features))
        self.bias = Parameter(np.zeros(out_features)) if bias else None
        self._x = None

    def forward(self, x):
        self._x = x
        y = x @ self.weight.data.T
        if self.bias is not None:
            y = y + self.bias.data
        return y

    def backward(self, grad_out):
        self.weight.grad += grad_out.T @ self._x
        if self.bias is not None:
            self.bias.grad += grad_out.sum(axis=0)
        return grad_out @ self.weight.data


class ChannelAffine(Module):
    """Learnable per-channel scale and shift, ``y = g[c] * x + b[c]``."""

    def __init__(self, channels):
        self.scale = Parameter(np.ones(channels))
        self.shift = Parameter(np.zeros(channels))
        self._x = None

    def forward(self, x):
        self._x = x
        return x * self.scale.data[:, None, None] + self.shift.data[:, None, None]

    def backward(self, grad_out):
        self.scale.grad += (grad_out * self._x).sum(axis=(0, 2, 3))
        self.shift.grad += grad_out.sum(axis=(0, 2, 3))
        return grad_out * self.scale.data[:, None, None]


class Activation(Module):
    """Stateless activation wrapped as a layer so compositions can cache."""

    def __init__(self, kind):
        if kind not in ops.ACTIVATION_KINDS:
            raise ValueError(f"unknown activation {kind!r}")
        self.kind = kind
        self._x = None

    def forward(self, x):
        self._x = x
        return ops.activation(x, self.kind)

    def backward(self, grad_out):
        return ops.activation_backward(grad_out, self._x, self.kind)
