"""Training and pipeline settings with strict ``key = value`` parsing."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

from .errors import BadValue, UnknownKey


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 4
    epochs: int = 20
    seed: int = 0
    pos_weight: float = 1.0
    shuffle: bool = True
    selection_metric: str = "dice"
    patience: int = 0  # 0 disables early stopping

    def __post_init__(self):
        if not (math.isfinite(self.lr) and self.lr > 0):
            raise BadValue(f"lr must be > 0, got {self.lr}")
        if self.batch_size < 1:
            raise BadValue(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise BadValue(f"epochs must be >= 0, got {self.epochs}")
        if not (math.isfinite(self.pos_weight) and self.pos_weight >= 0):
            raise BadValue(f"pos_weight must be >= 0, got {self.pos_weight}")
        if self.selection_metric not in ("dice", "loss"):
            raise BadValue(f"selection_metric must be 'dice' or 'loss', got {self.selection_metric!r}")
        if self.patience < 0:
            raise BadValue(f"patience must be >= 0, got {self.patience}")


@dataclass(frozen=True)
class PipelineSettings:
    band_lo: float = 8.0
    band_hi: float = 16.0
    grid: int = 256
    max_range_m: float = 0.0  # 0 means "edge of the last gate"
    dbz_lo: float = -10.0
    dbz_hi: float = 60.0
    depth: int = 2
    base_channels: int = 8
    padding_mode: str = "same"
    predict_threshold: float = 0.5
    val_fraction: float = 0.2
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.band_lo > self.band_hi:
            raise BadValue(f"band_lo ({self.band_lo}) must be <= band_hi ({self.band_hi})")
        if self.grid < 8 or self.grid % 2:
            raise BadValue(f"grid must be even and >= 8, got {self.grid}")
        if self.max_range_m < 0:
            raise BadValue("max_range_m must be >= 0")
        if not self.dbz_lo < self.dbz_hi:
            raise BadValue("dbz_lo must be < dbz_hi")
        if self.depth < 1 or self.base_channels < 1:
            raise BadValue("depth and base_channels must be >= 1")
        if self.padding_mode not in ("same", "valid"):
            raise BadValue(f"padding_mode must be 'same' or 'valid', got {self.padding_mode!r}")
        if not 0.0 <= self.predict_threshold <= 1.0:
            raise BadValue("predict_threshold must be in [0, 1]")
        if not 0.0 <= self.val_fraction < 1.0:
            raise BadValue("val_fraction must be in [0, 1)")

    @property
    def max_range(self):
        return self.max_range_m or None


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _convert(key, raw, typ):
    try:
        if typ is bool:
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(raw)
        if typ is int:
            return int(raw, 10)
        if typ is float:
            value = float(raw)
            if not math.isfinite(value):
                raise ValueError(raw)
            return value
        return raw
    except ValueError:
        raise BadValue(f"{key}: cannot parse {raw!r} as {typ.__name__}") from None


_TYPES = {"float": float, "int": int, "bool": bool, "str": str}


def _field_types(cls):
    return {f.name: _TYPES[f.type] for f in fields(cls) if f.type in _TYPES}


def parse_config(text: str) -> PipelineSettings:
    """Parse ``key = value`` lines into settings.

    Blank lines and ``#`` comments are ignored, unknown keys raise
    :class:`UnknownKey`, and values that violate a constraint raise
    :class:`BadValue`. Training keys (``lr``, ``epochs``...) and pipeline keys
    share one flat namespace.
    """
    train_types = _field_types(TrainConfig)
    pipe_types = _field_types(PipelineSettings)
    train_kw, pipe_kw = {}, {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise BadValue(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key in train_types:
            train_kw[key] = _convert(key, raw, train_types[key])
        elif key in pipe_types:
            pipe_kw[key] = _convert(key, raw, pipe_types[key])
        else:
            raise UnknownKey(f"line {lineno}: unknown key {key!r}")
    return PipelineSettings(train=TrainConfig(**train_kw), **pipe_kw)


def format_config(settings: PipelineSettings) -> str:
    lines = []
    for f in fields(TrainConfig):
        lines.append(f"{f.name} = {_fmt(getattr(settings.train, f.name))}")
    for f in fields(PipelineSettings):
        if f.name != "train":
            lines.append(f"{f.name} = {_fmt(getattr(settings, f.name))}")
    return "\n".join(lines) + "\n"


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)
