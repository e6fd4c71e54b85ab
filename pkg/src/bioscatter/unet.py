"""U-Net built from the autodiff ops.

Parameter names (the checkpoint contract)::

    enc{i}.conv{1,2}.{weight,bias}   i = 0..depth (i = depth is the bottleneck)
    dec{i}.up.{weight,bias}          i = depth-1..0, transposed conv
    dec{i}.conv{1,2}.{weight,bias}
    head.{weight,bias}               1x1 conv to a single logit channel

Encoder level i carries base * 2**i channels.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, center_crop, concat_channels, conv2d, conv_transpose2d, maxpool2, relu
from .dataio import Checkpoint
from .errors import CheckpointMismatch, IndivisibleSpatialDims, InvalidConfig, ShapeMismatch
from .radar import RadarImage, SegMask


@dataclass(frozen=True)
class UNetConfig:
    depth: int = 2
    base_channels: int = 8
    in_channels: int = 1
    out_channels: int = 1
    padding_mode: str = "same"

    def validate(self):
        if self.depth < 1:
            raise InvalidConfig(f"depth must be >= 1, got {self.depth}")
        if self.base_channels < 1 or self.in_channels < 1:
            raise InvalidConfig("channel counts must be >= 1")
        if self.out_channels != 1:
            raise InvalidConfig("the output head has exactly one channel")
        if self.padding_mode not in ("same", "valid"):
            raise InvalidConfig(f"padding_mode must be 'same' or 'valid', got {self.padding_mode!r}")

    def channels(self, level: int) -> int:
        return self.base_channels * 2**level

    def as_metadata(self) -> dict:
        return {
            "config.depth": str(self.depth),
            "config.base_channels": str(self.base_channels),
            "config.in_channels": str(self.in_channels),
            "config.out_channels": str(self.out_channels),
            "config.padding_mode": self.padding_mode,
        }

    @classmethod
    def from_metadata(cls, meta: dict) -> "UNetConfig":
        try:
            return cls(
                depth=int(meta["config.depth"]),
                base_channels=int(meta["config.base_channels"]),
                in_channels=int(meta["config.in_channels"]),
                out_channels=int(meta["config.out_channels"]),
                padding_mode=meta["config.padding_mode"],
            )
        except (KeyError, ValueError) as exc:
            raise CheckpointMismatch(f"checkpoint metadata lacks a usable model config: {exc}") from None


def parameter_shapes(config: UNetConfig):
    """Ordered ``(name, shape)`` pairs for every tensor of the model."""
    config.validate()
    shapes = []
    prev = config.in_channels
    for i in range(config.depth + 1):
        ch = config.channels(i)
        shapes += [
            (f"enc{i}.conv1.weight", (ch, prev, 3, 3)), (f"enc{i}.conv1.bias", (ch,)),
            (f"enc{i}.conv2.weight", (ch, ch, 3, 3)), (f"enc{i}.conv2.bias", (ch,)),
        ]
        prev = ch
    for i in reversed(range(config.depth)):
        ch = config.channels(i)
        shapes += [
            (f"dec{i}.up.weight", (2 * ch, ch, 2, 2)), (f"dec{i}.up.bias", (ch,)),
            (f"dec{i}.conv1.weight", (ch, 2 * ch, 3, 3)), (f"dec{i}.conv1.bias", (ch,)),
            (f"dec{i}.conv2.weight", (ch, ch, 3, 3)), (f"dec{i}.conv2.bias", (ch,)),
        ]
    shapes += [("head.weight", (1, config.base_channels, 1, 1)), ("head.bias", (1,))]
    return shapes


def _fan_in(name, shape):
    if name.endswith(".up.weight"):
        return shape[0] * shape[2] * shape[3]
    return shape[1] * shape[2] * shape[3]


class UNetModel:
    def __init__(self, config: UNetConfig, params: dict, seed: int = 0):
        self.config = config
        self.params = params
        self.seed = seed

    def __getitem__(self, name) -> Tensor:
        return self.params[name]

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def astype(self, dtype) -> "UNetModel":
        params = {k: Tensor(p.data.astype(dtype), requires_grad=True, name=k) for k, p in self.params.items()}
        return UNetModel(self.config, params, self.seed)

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def output_size(self, h: int, w: int):
        """Spatial size of the logits for an h x w input (raises if impossible)."""
        return _plan(self.config, h, w)[-1]

    def forward(self, x: Tensor, trace: list | None = None) -> Tensor:
        """Logits for an N x C x H x W batch.

        Pass a list as ``trace`` to collect ``(stage, shape)`` for every level.
        """
        cfg = self.config
        if x.data.ndim != 4 or x.shape[1] != cfg.in_channels:
            raise ShapeMismatch(f"expected N x {cfg.in_channels} x H x W input, got {x.shape}")
        _plan(cfg, x.shape[2], x.shape[3])
        pad = cfg.padding_mode
        p = self.params

        def double_conv(t, prefix):
            t = relu(conv2d(t, p[f"{prefix}.conv1.weight"], p[f"{prefix}.conv1.bias"], pad))
            return relu(conv2d(t, p[f"{prefix}.conv2.weight"], p[f"{prefix}.conv2.bias"], pad))

        skips = []
        for i in range(cfg.depth):
            x = double_conv(x, f"enc{i}")
            skips.append(x)
            x = maxpool2(x)
            if trace is not None:
                trace.append((f"enc{i}", skips[-1].shape))
        x = double_conv(x, f"enc{cfg.depth}")
        if trace is not None:
            trace.append((f"enc{cfg.depth}", x.shape))
        for i in reversed(range(cfg.depth)):
            x = conv_transpose2d(x, p[f"dec{i}.up.weight"], p[f"dec{i}.up.bias"])
            skip = center_crop(skips[i], x.shape[2], x.shape[3])
            x = double_conv(concat_channels(skip, x), f"dec{i}")
            if trace is not None:
                trace.append((f"dec{i}", x.shape))
        return conv2d(x, p["head.weight"], p["head.bias"], "valid")

    def to_checkpoint(self, **metadata) -> Checkpoint:
        meta = self.config.as_metadata()
        meta["init_seed"] = str(self.seed)
        meta.update({k: str(v) for k, v in metadata.items()})
        return Checkpoint(tensors={k: p.data.astype(np.float32).copy() for k, p in self.params.items()}, metadata=meta)

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint, config: UNetConfig | None = None) -> "UNetModel":
        stored = UNetConfig.from_metadata(ckpt.metadata)
        config = config or stored
        if config != stored:
            raise CheckpointMismatch(f"checkpoint was built for {stored}, runtime config is {config}")
        expected = parameter_shapes(config)
        names = {n for n, _ in expected}
        if names != set(ckpt.tensors):
            missing = sorted(names - set(ckpt.tensors))
            extra = sorted(set(ckpt.tensors) - names)
            raise CheckpointMismatch(f"tensor names differ (missing {missing[:4]}, unexpected {extra[:4]})")
        params = {}
        for name, shape in expected:
            arr = ckpt.tensors[name]
            if tuple(arr.shape) != shape:
                raise CheckpointMismatch(f"{name}: checkpoint shape {arr.shape}, model needs {shape}")
            params[name] = Tensor(np.array(arr, dtype=np.float32), requires_grad=True, name=name)
        seed = int(ckpt.metadata.get("init_seed", 0))
        return cls(config, params, seed)


def _plan(cfg: UNetConfig, h: int, w: int):
    """Walk the spatial sizes through the network; returns the size list."""
    sizes = [(h, w)]
    if cfg.padding_mode == "same":
        f = 2**cfg.depth
        if h % f or w % f:
            raise IndivisibleSpatialDims(f"input {h}x{w} is not divisible by 2**depth = {f}")
        return sizes + [(h, w)]
    for _ in range(cfg.depth):
        h, w = h - 4, w - 4
        if h < 2 or w < 2 or h % 2 or w % 2:
            raise IndivisibleSpatialDims(f"unpadded encoder reaches {h}x{w}, which cannot be pooled")
        h, w = h // 2, w // 2
    h, w = h - 4, w - 4
    for _ in range(cfg.depth):
        if h < 1 or w < 1:
            raise IndivisibleSpatialDims("input too small for the unpadded network")
        h, w = 2 * h - 4, 2 * w - 4
    if h < 1 or w < 1:
        raise IndivisibleSpatialDims("input too small for the unpadded network")
    return sizes + [(h, w)]


def build_unet(config: UNetConfig | None = None, seed: int = 0, dtype=np.float32) -> UNetModel:
    """He-normal weights (std sqrt(2 / fan_in)), zero biases, drawn in
    declaration order from ``default_rng(seed)``."""
    config = config or UNetConfig()
    config.validate()
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in parameter_shapes(config):
        if name.endswith(".bias"):
            arr = np.zeros(shape)
        else:
            arr = rng.standard_normal(shape) * np.sqrt(2.0 / _fan_in(name, shape))
        params[name] = Tensor(arr.astype(dtype), requires_grad=True, name=name)
    return UNetModel(config, params, seed)


def image_batch(images, dtype=np.float32) -> Tensor:
    return Tensor(np.stack([im.values for im in images])[:, None].astype(dtype))


def predict_logits(model: UNetModel, images) -> np.ndarray:
    """Logits (N x H' x W') for a list of images; no graph is kept."""
    return model.forward(image_batch(images, model.dtype)).data[:, 0]


def binarize(logits: np.ndarray, threshold: float) -> np.ndarray:
    """``sigmoid(logit) >= threshold`` evaluated exactly on the logit scale."""
    if threshold <= 0:
        return np.ones(logits.shape, dtype=bool)
    if threshold >= 1:
        return np.zeros(logits.shape, dtype=bool)
    return logits.astype(np.float64) >= np.log(threshold / (1.0 - threshold))


def embed_center(arr: np.ndarray, n: int) -> np.ndarray:
    """Place a smaller output map in the middle of an n x n zero canvas."""
    h, w = arr.shape
    if (h, w) == (n, n):
        return arr
    out = np.zeros((n, n), dtype=arr.dtype)
    top, left = (n - h) // 2, (n - w) // 2
    out[top : top + h, left : left + w] = arr
    return out


def predict_mask(model: UNetModel, image: RadarImage, threshold: float = 0.5) -> SegMask:
    """Binary mask: 1 where sigmoid(logit) >= threshold on a valid pixel.

    In unpadded mode the smaller output is centered in the image frame and
    the border is 0.
    """
    return predict_masks(model, [image], threshold)[0]


def predict_masks(model: UNetModel, images, threshold: float = 0.5, batch_size: int = 8):
    out = []
    for start in range(0, len(images), batch_size):
        chunk = images[start : start + batch_size]
        logits = predict_logits(model, chunk)
        for im, lg in zip(chunk, logits):
            bits = embed_center(binarize(lg, threshold), im.size) & im.valid
            out.append(SegMask(bits=bits.astype(np.uint8), provenance="predicted"))
    return out
