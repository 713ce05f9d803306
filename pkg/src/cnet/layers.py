"""Differentiable layer set: convolution, pooling, activations, dense,
dropout, flatten, and channel concatenation.

All spatial ops use channels-last layout (batch, height, width, channels).
Convolution is cross-correlation (no kernel flip).  Each op takes the tape
as its first argument; passing ``tape=None`` runs the forward only.
"""

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import (
    BadRate,
    ChannelMismatch,
    DimMismatch,
    NonPositiveOutput,
    ShapeMismatch,
    SpatialMismatch,
    TooSmall,
)
from .tensor import Tensor, emit


@dataclass
class Conv2D:
    """Convolution parameters; kernel is (kh, kw, in_channels, out_channels)."""

    kernel: Tensor
    bias: Tensor
    stride: int = 1
    padding: str = "same"


@dataclass
class Dense:
    """Fully connected parameters; weights are (in_units, out_units)."""

    weights: Tensor
    bias: Tensor


@dataclass
class DropoutSpec:
    rate: float
    mode: str = "train"


def _conv_geometry(h, w, kh, kw, stride, padding):
    """Output dims and zero-padding amounts for one spatial plane."""
    if padding == "same":
        ho = -(-h // stride)
        wo = -(-w // stride)
        pad_h = max((ho - 1) * stride + kh - h, 0)
        pad_w = max((wo - 1) * stride + kw - w, 0)
        pt, pl = pad_h // 2, pad_w // 2
        return ho, wo, pt, pad_h - pt, pl, pad_w - pl
    if padding == "valid":
        ho = (h - kh) // stride + 1
        wo = (w - kw) // stride + 1
        if ho < 1 or wo < 1:
            raise NonPositiveOutput(
                f"valid padding on {h}x{w} input with {kh}x{kw} kernel leaves no output"
            )
        return ho, wo, 0, 0, 0, 0
    raise ValueError(f"unknown padding mode {padding!r}")


def _im2col(xp: np.ndarray, kh, kw, stride, ho, wo):
    """Patch matrix (b*ho*wo, kh*kw*cin) from a padded (b,hp,wp,cin) array."""
    b = xp.shape[0]
    cin = xp.shape[3]
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))  # (b, h', w', cin, kh, kw)
    win = win[:, :: stride, :: stride][:, :ho, :wo]
    cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(b * ho * wo, kh * kw * cin)
    return np.ascontiguousarray(cols)


def _col2im(dcols: np.ndarray, b, h, w, cin, kh, kw, stride, ho, wo, pt, pb, pl, pr):
    """Scatter-add patch gradients back onto the unpadded input plane."""
    dcols = dcols.reshape(b, ho, wo, kh, kw, cin)
    dxp = np.zeros((b, h + pt + pb, w + pl + pr, cin), dtype=dcols.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, i : i + (ho - 1) * stride + 1 : stride,
                j : j + (wo - 1) * stride + 1 : stride] += dcols[:, :, :, i, j, :]
    return dxp[:, pt : pt + h, pl : pl + w, :]


def _conv2d_backward(g, cols, x_data, kmat, geom, needs_dx):
    """Gradients (dx, dkernel, dbias) for one conv2d record."""
    b, h, w, cin, kh, kw, stride, ho, wo, pt, pb, pl, pr = geom
    cout = kmat.shape[1]
    gflat = g.reshape(-1, cout)
    if cols is None:  # 1x1 stride-1 fast path
        xmat = x_data.reshape(-1, cin)
        dk = xmat.T @ gflat
        dx = (gflat @ kmat.T).reshape(b, h, w, cin) if needs_dx else None
    else:
        dk = cols.T @ gflat
        dx = None
        if needs_dx:
            dx = _col2im(gflat @ kmat.T, b, h, w, cin, kh, kw, stride, ho, wo, pt, pb, pl, pr)
    return dx, dk.reshape(kh, kw, cin, cout), gflat.sum(axis=0)


def conv2d(tape, x: Tensor, layer: Conv2D) -> Tensor:
    """Cross-correlate (b,h,w,cin) with the layer kernel; bias per channel."""
    if x.data.ndim != 4:
        raise ShapeMismatch(f"conv2d expects a 4-d input, got {x.shape}")
    kh, kw, cin, cout = layer.kernel.shape
    b, h, w, xc = x.shape
    if xc != cin:
        raise ChannelMismatch(f"input has {xc} channels, kernel expects {cin}")
    stride = layer.stride
    ho, wo, pt, pb, pl, pr = _conv_geometry(h, w, kh, kw, stride, layer.padding)
    kmat = layer.kernel.data.reshape(kh * kw * cin, cout)

    if kh == 1 and kw == 1 and stride == 1:
        cols = None
        out = x.data.reshape(-1, cin) @ kmat + layer.bias.data
    else:
        xp = x.data
        if pt or pb or pl or pr:
            xp = np.pad(x.data, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
        cols = _im2col(xp, kh, kw, stride, ho, wo)
        out = cols @ kmat + layer.bias.data
    out = out.reshape(b, ho, wo, cout)

    geom = (b, h, w, cin, kh, kw, stride, ho, wo, pt, pb, pl, pr)
    needs_dx = x.requires_grad
    x_data = x.data

    def bwd(g):
        return _conv2d_backward(g, cols, x_data, kmat, geom, needs_dx)

    return emit(tape, (x, layer.kernel, layer.bias), out, bwd)


def _maxpool_backward(g, idx, b, h, w, c, ho, wo):
    dwin = np.zeros((b, ho, wo, 4, c), dtype=g.dtype)
    np.put_along_axis(dwin, idx[:, :, :, None, :], g[:, :, :, None, :], axis=3)
    dxc = dwin.reshape(b, ho, wo, 2, 2, c).transpose(0, 1, 3, 2, 4, 5)
    dxc = dxc.reshape(b, ho * 2, wo * 2, c)
    if ho * 2 == h and wo * 2 == w:
        return (dxc,)
    dx = np.zeros((b, h, w, c), dtype=g.dtype)
    dx[:, : ho * 2, : wo * 2, :] = dxc
    return (dx,)


def maxpool2x2(tape, x: Tensor) -> Tensor:
    """2x2/stride-2 max pooling with floor semantics; odd edges are dropped.

    Backward routes each window's gradient to its first row-major argmax.
    """
    if x.data.ndim != 4:
        raise ShapeMismatch(f"maxpool2x2 expects a 4-d input, got {x.shape}")
    b, h, w, c = x.shape
    if h < 2 or w < 2:
        raise TooSmall(f"maxpool2x2 needs at least 2x2 spatial dims, got {h}x{w}")
    ho, wo = h // 2, w // 2
    win = x.data[:, : ho * 2, : wo * 2, :].reshape(b, ho, 2, wo, 2, c)
    win = win.transpose(0, 1, 3, 2, 4, 5).reshape(b, ho, wo, 4, c)
    idx = win.argmax(axis=3)
    out = np.take_along_axis(win, idx[:, :, :, None, :], axis=3)[:, :, :, 0, :]

    def bwd(g):
        return _maxpool_backward(g, idx, b, h, w, c, ho, wo)

    return emit(tape, (x,), out, bwd)


def relu(tape, x: Tensor) -> Tensor:
    """max(0, x); the gradient at exactly 0 is 0."""
    mask = x.data > 0
    return emit(tape, (x,), np.where(mask, x.data, 0), lambda g: (g * mask,))


def sigmoid(tape, x: Tensor) -> Tensor:
    """Numerically stable logistic: no overflow for large |x|."""
    z = x.data
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return emit(tape, (x,), out, lambda g: (g * out * (1.0 - out),))


def dense(tape, x: Tensor, layer: Dense) -> Tensor:
    """x @ weights + bias over a (batch, in_units) input."""
    if x.data.ndim != 2:
        raise DimMismatch(f"dense expects a 2-d input, got {x.shape}")
    w = layer.weights
    if x.shape[1] != w.shape[0]:
        raise DimMismatch(f"input width {x.shape[1]} != weight rows {w.shape[0]}")
    out = x.data @ w.data + layer.bias.data
    x_data, w_data = x.data, w.data
    needs_dx = x.requires_grad

    def bwd(g):
        dx = g @ w_data.T if needs_dx else None
        return dx, x_data.T @ g, g.sum(axis=0)

    return emit(tape, (x, w, layer.bias), out, bwd)


def dropout(tape, x: Tensor, spec: DropoutSpec, rng=None) -> Tensor:
    """Inverted dropout: train-mode survivors scaled by 1/(1-rate).

    Eval mode and rate 0 are the identity.  The mask comes entirely from
    ``rng``, so a fixed generator state fixes the mask.
    """
    rate = spec.rate
    if rate < 0 or rate >= 1:
        raise BadRate(f"dropout rate must be in [0, 1), got {rate}")
    if spec.mode == "eval" or rate == 0:
        return x
    if rng is None:
        raise ValueError("train-mode dropout requires an rng")
    keep = rng.random(x.shape) >= rate
    factor = keep.astype(x.dtype) / np.asarray(1.0 - rate, dtype=x.dtype)
    return emit(tape, (x,), x.data * factor, lambda g: (g * factor,))


def flatten(tape, x: Tensor) -> Tensor:
    """Row-major (b,h,w,c) -> (b, h*w*c)."""
    if x.data.ndim != 4:
        raise ShapeMismatch(f"flatten expects a 4-d input, got {x.shape}")
    shape = x.shape
    out = x.data.reshape(shape[0], -1)
    return emit(tape, (x,), out, lambda g: (g.reshape(shape),))


def concat_channels(tape, a: Tensor, b: Tensor) -> Tensor:
    """Join two (batch,m,n,c) maps along the channel axis, order preserved."""
    if a.data.ndim != 4 or b.data.ndim != 4:
        raise ShapeMismatch("concat_channels expects 4-d inputs")
    if a.shape[:3] != b.shape[:3]:
        raise SpatialMismatch(
            f"batch/spatial dims differ: {a.shape[:3]} vs {b.shape[:3]}"
        )
    ci = a.shape[3]
    out = np.concatenate([a.data, b.data], axis=3)
    return emit(tape, (a, b), out, lambda g: (g[..., :ci], g[..., ci:]))


def he_uniform(shape, fan_in, rng, dtype=np.float32):
    limit = math.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def glorot_uniform(shape, fan_in, fan_out, rng, dtype=np.float32):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)
