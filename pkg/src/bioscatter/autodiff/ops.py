"""Differentiable ops needed by the U-Net: convs, pooling, activations, loss.

All spatial ops use NCHW layout. Convolutions are cross-correlations (no
kernel flip) with stride 1; the transposed convolution is fixed at a 2x2
kernel with stride 2.
"""
from __future__ import annotations

import numpy as np

from .. import _kernels
from ..errors import NoValidPixels, OddSpatialDims, ShapeMismatch
from .tensor import Tensor, check_dtypes, make


def _need_4d(name, t):
    if t.data.ndim != 4:
        raise ShapeMismatch(f"{name}: expected NCHW, got shape {t.shape}")


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, padding: str = "same") -> Tensor:
    """Stride-1 2-D cross-correlation.

    ``padding="same"`` zero-pads so the output keeps H x W (odd kernels only);
    ``"valid"`` gives H - kh + 1 x W - kw + 1.
    """
    _need_4d("conv2d", x)
    dt = check_dtypes(x, weight, bias)
    n, c, h, w = x.shape
    if weight.data.ndim != 4 or weight.shape[1] != c:
        raise ShapeMismatch(f"conv2d: weight {weight.shape} does not take {c} input channels")
    o, _, kh, kw = weight.shape
    if bias.shape != (o,):
        raise ShapeMismatch(f"conv2d: bias {bias.shape} != ({o},)")
    if padding == "same":
        if kh % 2 == 0 or kw % 2 == 0:
            raise ShapeMismatch("conv2d: same padding needs odd kernel sizes")
        ph, pw = kh // 2, kw // 2
    elif padding == "valid":
        ph = pw = 0
    else:
        raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if ph or pw else x.data
    hp, wp = h + 2 * ph, w + 2 * pw
    ho, wo = hp - kh + 1, wp - kw + 1
    if ho < 1 or wo < 1:
        raise ShapeMismatch(f"conv2d: {kh}x{kw} kernel larger than {hp}x{wp} input")

    cols = _kernels.im2col(np.ascontiguousarray(xp), kh, kw)
    w2 = weight.data.reshape(o, c * kh * kw)
    out = np.matmul(w2, cols).reshape(n, o, ho, wo)
    out += bias.data.reshape(1, o, 1, 1)

    def backward(g):
        g2 = np.ascontiguousarray(g).reshape(n, o, ho * wo)
        gb = g.sum(axis=(0, 2, 3), dtype=dt)
        gw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape)
        dcols = np.ascontiguousarray(np.matmul(w2.T, g2))
        gx = _kernels.col2im(dcols, c, hp, wp, kh, kw)
        if ph or pw:
            gx = gx[:, :, ph : ph + h, pw : pw + w]
        return np.ascontiguousarray(gx), gw, gb

    return make(out, (x, weight, bias), backward)


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """2x2, stride-2 transposed convolution: each input pixel scatters
    ``value * kernel`` into its own 2x2 output block (blocks never overlap)."""
    _need_4d("conv_transpose2d", x)
    dt = check_dtypes(x, weight, bias)
    n, c, h, w = x.shape
    if weight.data.ndim != 4 or weight.shape[0] != c or weight.shape[2:] != (2, 2):
        raise ShapeMismatch(f"conv_transpose2d: weight {weight.shape} incompatible with {c} input channels")
    o = weight.shape[1]
    if bias.shape != (o,):
        raise ShapeMismatch(f"conv_transpose2d: bias {bias.shape} != ({o},)")

    xr = x.data.reshape(n, c, h * w)
    wr = weight.data.reshape(c, o * 4)
    blocks = np.matmul(wr.T, xr)  # n, o*4, h*w
    out = blocks.reshape(n, o, 2, 2, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, o, 2 * h, 2 * w)
    out = out + bias.data.reshape(1, o, 1, 1)

    def backward(g):
        gb = g.sum(axis=(0, 2, 3), dtype=dt)
        gr = g.reshape(n, o, h, 2, w, 2).transpose(0, 1, 3, 5, 2, 4).reshape(n, o * 4, h * w)
        gx = np.matmul(wr, gr).reshape(n, c, h, w)
        gw = np.matmul(xr, gr.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape)
        return gx, gw, gb

    return make(np.ascontiguousarray(out), (x, weight, bias), backward)


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pool, stride 2. The gradient goes to the first maximum in
    row-major window order."""
    _need_4d("maxpool2", x)
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise OddSpatialDims(f"maxpool2 needs even H and W, got {h}x{w}")
    out, idx = _kernels.maxpool2_forward(x.data)

    def backward(g):
        return (_kernels.maxpool2_backward(np.ascontiguousarray(g), idx),)

    return make(out, (x,), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make(np.where(mask, x.data, x.dtype.type(0)), (x,), lambda g: (g * mask,))


def _stable_sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(x: Tensor) -> Tensor:
    s = _stable_sigmoid(x.data)
    return make(s, (x,), lambda g: (g * s * (1 - s),))


def activation(kind: str, x: Tensor) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"unknown activation {kind!r}")


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    _need_4d("concat_channels", a)
    _need_4d("concat_channels", b)
    check_dtypes(a, b)
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeMismatch(f"concat_channels: {a.shape} vs {b.shape}")
    ca = a.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)
    return make(out, (a, b), lambda g: (np.ascontiguousarray(g[:, :ca]), np.ascontiguousarray(g[:, ca:])))


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    _need_4d("slice_channels", x)
    shape = x.shape

    def backward(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[:, start:stop] = g
        return (full,)

    return make(np.ascontiguousarray(x.data[:, start:stop]), (x,), backward)


def center_crop(x: Tensor, h: int, w: int) -> Tensor:
    """Crop the spatial dims to h x w around the center (top-left biased)."""
    _need_4d("center_crop", x)
    shape = x.shape
    H, W = shape[2:]
    if h > H or w > W:
        raise ShapeMismatch(f"center_crop: cannot crop {H}x{W} to {h}x{w}")
    if (h, w) == (H, W):
        return x
    top, left = (H - h) // 2, (W - w) // 2

    def backward(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[:, :, top : top + h, left : left + w] = g
        return (full,)

    return make(np.ascontiguousarray(x.data[:, :, top : top + h, left : left + w]), (x,), backward)


def bce_with_logits(logits: Tensor, targets, valid=None, pos_weight: float = 1.0) -> Tensor:
    """Mean binary cross-entropy over valid pixels, computed from logits.

    Per pixel ``w * (max(x, 0) - x*t + log1p(exp(-|x|)))`` where ``w`` is
    ``pos_weight`` on positive targets and 1 elsewhere.
    """
    t = np.asarray(targets.data if isinstance(targets, Tensor) else targets, dtype=logits.dtype)
    if t.shape != logits.shape:
        raise ShapeMismatch(f"bce_with_logits: targets {t.shape} vs logits {logits.shape}")
    v = np.ones(t.shape, dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    if v.shape != t.shape:
        raise ShapeMismatch(f"bce_with_logits: valid mask {v.shape} vs logits {logits.shape}")
    count = int(v.sum())
    if count == 0:
        raise NoValidPixels("no valid pixels to average the loss over")
    if pos_weight < 0:
        raise ValueError("pos_weight must be >= 0")
    dt = logits.dtype.type
    x = logits.data
    weight = np.where(t > 0.5, dt(pos_weight), dt(1)) * v
    per_pixel = np.maximum(x, 0) - x * t + np.log1p(np.exp(-np.abs(x)))
    loss = np.asarray((weight * per_pixel).sum(dtype=np.float64) / count, dtype=logits.dtype)

    def backward(g):
        return (g * weight * (_stable_sigmoid(x) - t) / dt(count),)

    return make(loss, (logits,), backward)
