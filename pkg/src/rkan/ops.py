"""Dense tensor operations in batch-channel-height-width layout.

Every differentiable operation here has a matching adjoint (``*_backward``)
that maps an output gradient back to input gradients. Arrays are plain numpy
ndarrays; double precision is the default throughout the kit, and the adjoint
of each op is validated against central finite differences in the test suite.

Patch matrices produced by :func:`unfold` have shape ``[B, I, L]`` with
``I = C * k_h * k_w``. Column index ``c*k_h*k_w + u*k_w + v`` corresponds to
channel ``c``, kernel row ``u``, kernel column ``v``; location index runs
row-major over the output grid. All weight layouts downstream are defined
against this ordering.
"""

from __future__ import annotations

import numpy as np

from .errors import GeometryError, InputError


def conv_output_hw(h, w, kernel, stride, padding):
    """Output spatial dims for a (kernel, stride, padding) geometry."""
    kh, kw = kernel
    if kh < 1 or kw < 1:
        raise GeometryError(f"kernel dims must be >= 1, got {kernel}")
    if stride < 1:
        raise GeometryError(f"stride must be >= 1, got {stride}")
    if padding < 0:
        raise GeometryError(f"padding must be >= 0, got {padding}")
    hp, wp = h + 2 * padding, w + 2 * padding
    if kh > hp or kw > wp:
        raise GeometryError(
            f"kernel {kh}x{kw} larger than padded input {hp}x{wp}"
        )
    return (hp - kh) // stride + 1, (wp - kw) // stride + 1


def unfold(x, kernel, stride=1, padding=0):
    """Extract sliding patches from ``x [B,C,H,W]`` into ``[B, C*kh*kw, L]``.

    Zero-fill padding outside the borders. ``L = H_out * W_out`` in row-major
    output-grid order.
    """
    b, c, h, w = x.shape
    kh, kw = kernel
    h_out, w_out = conv_output_hw(h, w, kernel, stride, padding)
    if padding > 0:
        img = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        img = x
    cols = np.empty((b, c, kh, kw, h_out, w_out), dtype=x.dtype)
    for u in range(kh):
        for v in range(kw):
            cols[:, :, u, v] = img[:, :, u : u + stride * h_out : stride,
                                   v : v + stride * w_out : stride]
    return cols.reshape(b, c * kh * kw, h_out * w_out)


def unfold_backward(grad_patches, x_shape, kernel, stride=1, padding=0):
    """Adjoint of :func:`unfold`: scatter-add patch gradients back to ``x``.

    Overlapping patches accumulate additively.
    """
    b, c, h, w = x_shape
    kh, kw = kernel
    h_out, w_out = conv_output_hw(h, w, kernel, stride, padding)
    g = grad_patches.reshape(b, c, kh, kw, h_out, w_out)
    hp, wp = h + 2 * padding, w + 2 * padding
    img = np.zeros((b, c, hp, wp), dtype=grad_patches.dtype)
    for u in range(kh):
        for v in range(kw):
            img[:, :, u : u + stride * h_out : stride,
                v : v + stride * w_out : stride] += g[:, :, u, v]
    if padding > 0:
        return img[:, :, padding : padding + h, padding : padding + w]
    return img


def fold_to_grid(y, grid):
    """Reshape per-patch outputs ``[B, C, L]`` onto an ``H_out x W_out`` grid.

    Pure reshape in the same row-major location order as :func:`unfold`;
    each output location holds exactly one patch value.
    """
    b, c, length = y.shape
    h_out, w_out = grid
    if length != h_out * w_out:
        raise GeometryError(
            f"cannot fold {length} locations onto a {h_out}x{w_out} grid"
        )
    return y.reshape(b, c, h_out, w_out)


def fold_to_grid_backward(grad_out):
    """Adjoint of :func:`fold_to_grid`: reshape back to ``[B, C, L]``."""
    b, c, h_out, w_out = grad_out.shape
    return grad_out.reshape(b, c, h_out * w_out)


def conv2d(x, weight, bias=None, stride=1, padding=0):
    """Cross-correlation of ``x [B,C_in,H,W]`` with ``weight [C_out,C_in,kh,kw]``."""
    c_out, c_in, kh, kw = weight.shape
    if x.shape[1] != c_in:
        raise GeometryError(
            f"input has {x.shape[1]} channels, weight expects {c_in}"
        )
    h_out, w_out = conv_output_hw(x.shape[2], x.shape[3], (kh, kw), stride, padding)
    cols = unfold(x, (kh, kw), stride, padding)
    y = np.matmul(weight.reshape(c_out, -1), cols)
    if bias is not None:
        y = y + bias[:, None]
    return fold_to_grid(y, (h_out, w_out))


def conv2d_backward(grad_out, x, weight, stride=1, padding=0, cols=None):
    """Adjoint of :func:`conv2d`.

    Returns ``(grad_x, grad_weight, grad_bias)``. Pass the forward's patch
    matrix as ``cols`` to skip re-unfolding.
    """
    c_out, c_in, kh, kw = weight.shape
    b = x.shape[0]
    if cols is None:
        cols = unfold(x, (kh, kw), stride, padding)
    gy = grad_out.reshape(b, c_out, -1)
    grad_w = np.tensordot(gy, cols, axes=([0, 2], [0, 2])).reshape(weight.shape)
    grad_b = gy.sum(axis=(0, 2))
    grad_cols = np.matmul(weight.reshape(c_out, -1).T, gy)
    grad_x = unfold_backward(grad_cols, x.shape, (kh, kw), stride, padding)
    return grad_x, grad_w, grad_b


def sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


ACTIVATION_KINDS = ("tanh", "silu", "relu")


def activation(x, kind):
    """Element-wise activation; ``silu(x) = x * sigmoid(x)``."""
    if kind == "tanh":
        return np.tanh(x)
    if kind == "silu":
        return x * sigmoid(x)
    if kind == "relu":
        return np.maximum(x, 0.0)
    raise InputError(f"unknown activation {kind!r}, expected one of {ACTIVATION_KINDS}")


def activation_backward(grad_out, x, kind):
    """Adjoint of :func:`activation` given the forward input ``x``."""
    if kind == "tanh":
        t = np.tanh(x)
        return grad_out * (1.0 - t * t)
    if kind == "silu":
        s = sigmoid(x)
        return grad_out * (s * (1.0 + x * (1.0 - s)))
    if kind == "relu":
        return grad_out * (x > 0)
    raise InputError(f"unknown activation {kind!r}, expected one of {ACTIVATION_KINDS}")


def global_avg_pool(x):
    """Per-channel spatial mean, ``[B,C,H,W] -> [B,C,1,1]``."""
    return x.mean(axis=(2, 3), keepdims=True)


def global_avg_pool_backward(grad_out, x_shape):
    b, c, h, w = x_shape
    return np.broadcast_to(grad_out / (h * w), x_shape).copy()


def softmax_cross_entropy(logits, labels):
    """Mean negative log-likelihood of ``labels`` under softmax(logits).

    Computed with max-subtraction for stability. Returns the scalar loss and
    the logit gradient ``(softmax - onehot) / B``.
    """
    b, k = logits.shape
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() >= k:
        raise InputError(
            f"labels must lie in [0, {k}), got range "
            f"[{labels.min()}, {labels.max()}]"
        )
    z = logits - logits.max(axis=1, keepdims=True)
    expz = np.exp(z)
    denom = expz.sum(axis=1, keepdims=True)
    logp = z - np.log(denom)
    loss = -logp[np.arange(b), labels].mean()
    grad = expz / denom
    grad[np.arange(b), labels] -= 1.0
    return loss, grad / b
