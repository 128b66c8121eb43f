"""KAN convolution: per-patch basis expansion with a parallel linear path.

The layer unfolds the input into patches, tanh-normalizes them, expands each
patch feature in a polynomial (or RBF) basis with learnable coefficients, and
adds a plain linear transform of the *raw* patches as a shortcut. Folding the
per-patch outputs back produces a tensor with the same spatial geometry a
standard convolution would give for the same kernel/stride/padding.

With all basis coefficients at zero the layer degenerates exactly to a
standard convolution whose weights are the linear-path weights; the test
suite holds it to that, and to a naive per-patch loop oracle.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .basis import BasisKind, Chebyshev, basis_grads, basis_values, tanh_normalize
from .errors import GeometryError, NumericError
from .layers import Module, Parameter


def kan_parameter_count(in_channels, out_channels, kernel_h, kernel_w,
                        basis, linear_path=True):
    """Learnable-scalar counts for a KAN conv layer.

    ``basis_params = C_in * C_out * k_h * k_w * M`` where M is the number of
    basis terms (degree + 1 for Chebyshev, center count for RBF); the linear
    path adds one weight per (output, patch-feature) pair.
    """
    if min(in_channels, out_channels, kernel_h, kernel_w) < 1:
        raise GeometryError("channel and kernel dims must be positive")
    per_weight = in_channels * out_channels * kernel_h * kernel_w
    counts = {
        "basis_params": per_weight * basis.size,
        "linear_params": per_weight if linear_path else 0,
    }
    counts["total"] = counts["basis_params"] + counts["linear_params"]
    return counts


class KanConv2d(Module):
    """Convolution whose per-weight action is a learnable basis expansion.

    Coefficients ``alpha`` have shape ``[C_out, I, M]`` with
    ``I = C_in * k_h * k_w`` patch features and M basis terms; the parallel
    linear path holds ``w_lin [C_out, I]`` applied to raw (pre-tanh) patches.
    No bias anywhere: the constant basis term already provides one.
    """

    def __init__(self, in_channels, out_channels, kernel_size, stride=1,
                 padding=0, basis: BasisKind | None = None, linear_path=True,
                 rng=None):
        rng = rng if rng is not None else np.random.default_rng()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = (kernel_size, kernel_size)
        self.stride = stride
        self.padding = padding
        self.basis = basis if basis is not None else Chebyshev(3)
        self.linear_path = linear_path

        i = in_channels * kernel_size * kernel_size
        m = self.basis.size
        a = np.sqrt(1.0 / (i * m))
        self.alpha = Parameter(rng.uniform(-a, a, size=(out_channels, i, m)))
        if linear_path:
            b = np.sqrt(1.0 / i)
            self.w_lin = Parameter(rng.uniform(-b, b, size=(out_channels, i)))
        else:
            self.w_lin = None
        self._cache = None

    @property
    def patch_features(self):
        return self.in_channels * self.kernel[0] * self.kernel[1]

    def parameter_count(self):
        return kan_parameter_count(
            self.in_channels, self.out_channels, *self.kernel,
            basis=self.basis, linear_path=self.linear_path)

    def forward(self, x):
        if x.shape[1] != self.in_channels:
            raise GeometryError(
                f"input has {x.shape[1]} channels, layer expects {self.in_channels}"
            )
        b = x.shape[0]
        i, m = self.patch_features, self.basis.size
        h_out, w_out = ops.conv_output_hw(
            x.shape[2], x.shape[3], self.kernel, self.stride, self.padding)

        cols = ops.unfold(x, self.kernel, self.stride, self.padding)
        xn = tanh_normalize(cols)
        feats = basis_values(self.basis, xn)                   # [B, I, L, M]
        fm = feats.transpose(0, 1, 3, 2).reshape(b, i * m, -1)  # [B, I*M, L]
        y = np.matmul(self.alpha.data.reshape(self.out_channels, i * m), fm)
        if self.linear_path:
            y = y + np.matmul(self.w_lin.data, cols)
        out = ops.fold_to_grid(y, (h_out, w_out))
        if not np.isfinite(out).all():
            raise NumericError("kan convolution produced non-finite values")
        self._cache = (x.shape, cols, xn, fm)
        return out

    def backward(self, grad_out):
        x_shape, cols, xn, fm = self._cache
        b = x_shape[0]
        i, m = self.patch_features, self.basis.size
        gy = grad_out.reshape(b, self.out_channels, -1)

        self.alpha.grad += np.tensordot(
            gy, fm, axes=([0, 2], [0, 2])).reshape(self.alpha.data.shape)
        gfm = np.matmul(self.alpha.data.reshape(self.out_channels, i * m).T, gy)
        gfeats = gfm.reshape(b, i, m, -1).transpose(0, 1, 3, 2)
        gxn = (gfeats * basis_grads(self.basis, xn)).sum(axis=-1)
        gcols = gxn * (1.0 - xn * xn)
        if self.linear_path:
            self.w_lin.grad += np.tensordot(gy, cols, axes=([0, 2], [0, 2]))
            gcols = gcols + np.matmul(self.w_lin.data.T, gy)
        return ops.unfold_backward(
            gcols, x_shape, self.kernel, self.stride, self.padding)
