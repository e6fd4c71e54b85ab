"""Gradient-check suites shared by the ``gradcheck`` subcommand and the tests."""
from __future__ import annotations

import numpy as np

from .autodiff import (
    Tensor,
    bce_with_logits,
    center_crop,
    concat_channels,
    conv2d,
    conv_transpose2d,
    grad_check,
    maxpool2,
    relu,
    sigmoid,
)
from .unet import UNetConfig, build_unet

ELEMENTWISE_BOUND = 1e-8
SPATIAL_BOUND = 1e-4


def _leaf(rng, shape, low=None):
    data = rng.standard_normal(shape)
    if low is not None:  # keep away from a kink at zero
        data = np.sign(data) * (np.abs(data) + low)
    return Tensor(data, dtype=np.float64, requires_grad=True)


def _probe(rng, shape):
    # magnitudes in [0.5, 1.5]: a near-zero gradient turns finite-difference
    # roundoff into a large relative error that says nothing about the op
    mag = rng.uniform(0.5, 1.5, shape)
    return Tensor(np.where(rng.random(shape) < 0.5, -mag, mag), dtype=np.float64)


def build_relu(rng):
    x = _leaf(rng, (3, 7), low=0.1)
    r = _probe(rng, x.shape)
    return (lambda: (relu(x) * r).sum()), {"x": x}


def build_sigmoid(rng):
    x = _leaf(rng, (3, 7))
    r = _probe(rng, x.shape)
    return (lambda: (sigmoid(x) * r).sum()), {"x": x}


def build_arith(rng):
    a = Tensor(rng.uniform(0.5, 1.5, (4, 5)), dtype=np.float64, requires_grad=True)
    b = Tensor(rng.uniform(0.5, 1.5, (4, 5)), dtype=np.float64, requires_grad=True)
    r = _probe(rng, a.shape)
    return (lambda: ((a * b + a * a + b - a * 0.5) * r).sum()), {"a": a, "b": b}


def build_bce(rng):
    x = _leaf(rng, (2, 1, 4, 4))
    t = (rng.random(x.shape) > 0.5).astype(np.float64)
    v = rng.random(x.shape) > 0.2
    v.flat[0] = True
    pw = float(rng.uniform(0.5, 3.0))
    return (lambda: bce_with_logits(x, t, v, pw)), {"x": x}


def build_conv(rng, padding="same"):
    x = _leaf(rng, (2, 3, 6, 6))
    w = _leaf(rng, (4, 3, 3, 3))
    b = _leaf(rng, (4,))
    ho = 6 if padding == "same" else 4
    r = _probe(rng, (2, 4, ho, ho))
    return (lambda: (conv2d(x, w, b, padding) * r).sum()), {"x": x, "weight": w, "bias": b}


def build_conv_valid(rng):
    return build_conv(rng, "valid")


def build_conv_transpose(rng):
    x = _leaf(rng, (2, 4, 3, 3))
    w = _leaf(rng, (4, 2, 2, 2))
    b = _leaf(rng, (2,))
    r = _probe(rng, (2, 2, 6, 6))
    return (lambda: (conv_transpose2d(x, w, b) * r).sum()), {"x": x, "weight": w, "bias": b}


def build_maxpool(rng):
    x = _leaf(rng, (2, 3, 6, 6))
    r = _probe(rng, (2, 3, 3, 3))
    return (lambda: (maxpool2(x) * r).sum()), {"x": x}


def build_concat_crop(rng):
    a, b = _leaf(rng, (1, 2, 6, 6)), _leaf(rng, (1, 3, 4, 4))
    r = _probe(rng, (1, 5, 4, 4))
    return (lambda: (concat_channels(center_crop(a, 4, 4), b) * r).sum()), {"a": a, "b": b}


def build_stack(rng):
    """conv -> relu -> pool -> transposed conv, the U-Net's spatial round trip."""
    x = _leaf(rng, (1, 2, 8, 8))
    w1, b1 = _leaf(rng, (3, 2, 3, 3)), _leaf(rng, (3,))
    w2, b2 = _leaf(rng, (3, 2, 2, 2)), _leaf(rng, (2,))
    r = _probe(rng, (1, 2, 8, 8))

    def loss():
        h = maxpool2(relu(conv2d(x, w1, b1, "same")))
        return (conv_transpose2d(h, w2, b2) * r).sum()

    return loss, {"x": x, "w1": w1, "b1": b1, "w2": w2, "b2": b2}


def make_unet_builder(depth=2, base=4, size=8, padding_mode="same"):
    def build(rng):
        model = build_unet(UNetConfig(depth=depth, base_channels=base, padding_mode=padding_mode),
                           seed=int(rng.integers(2**31)), dtype=np.float64)
        for name, p in model.params.items():
            if name.endswith(".bias"):
                p.data[...] = rng.normal(0.0, 0.1, p.shape)
        x = Tensor(rng.random((2, 1, size, size)), dtype=np.float64)
        out = model.output_size(size, size)
        t = (rng.random((2, 1) + out) > 0.7).astype(np.float64)
        return (lambda: bce_with_logits(model.forward(x), t)), model.params

    return build


SUITES = [
    ("relu", build_relu, ELEMENTWISE_BOUND, None),
    ("sigmoid", build_sigmoid, ELEMENTWISE_BOUND, None),
    ("add/mul/sum", build_arith, ELEMENTWISE_BOUND, None),
    ("bce_with_logits", build_bce, ELEMENTWISE_BOUND, None),
    ("conv2d(same)", build_conv, SPATIAL_BOUND, None),
    ("conv2d(valid)", build_conv_valid, SPATIAL_BOUND, None),
    ("conv_transpose2d", build_conv_transpose, SPATIAL_BOUND, None),
    ("maxpool2", build_maxpool, SPATIAL_BOUND, None),
    ("concat+crop", build_concat_crop, SPATIAL_BOUND, None),
    ("conv/pool/upconv stack", build_stack, SPATIAL_BOUND, None),
    ("unet depth2/base4", make_unet_builder(), SPATIAL_BOUND, 6),
]


def run_gradchecks(seed: int = 0, trials: int = 5):
    """Yield ``(name, max_rel_err, bound)`` per suite."""
    for i, (name, build, bound, coords) in enumerate(SUITES):
        yield name, grad_check(build, eps=1e-5, trials=trials, seed=seed + 7919 * i, max_coords=coords), bound
