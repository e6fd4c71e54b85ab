"""Binary codecs: PGM images and masks, WRCK checkpoints, manifests.

WRCK layout (little-endian)::

    "WRCK" | u8 version | u32 tensor_count
    per tensor, sorted by name:
        u16 name_len | name (UTF-8) | u8 ndim | u32 dims[ndim] | float32 payload
    u32 metadata_len | metadata (UTF-8 "key = value" lines)
"""
from __future__ import annotations

import os
import re
import struct
from dataclasses import dataclass, field

import numpy as np

from .config import PipelineSettings, TrainConfig, format_config, parse_config  # noqa: F401
from .errors import (
    BadMagic,
    BadVersion,
    BioscatterError,
    DuplicateName,
    InvariantViolation,
    MalformedHeader,
    TruncatedData,
    ValueOutOfRange,
)
from .radar import RadarImage, SegMask, image_from_values


class IoError(BioscatterError, OSError):
    pass


# -- PGM ---------------------------------------------------------------------

_DBZ_COMMENT = re.compile(rb"^# dbz_lo=(\S+) dbz_hi=(\S+)$")


def _encode_pgm(obj) -> bytes:
    if isinstance(obj, SegMask):
        bits = obj.bits
        h, w = bits.shape
        return f"P5\n{w} {h}\n255\n".encode("ascii") + (bits.astype(np.uint8) * 255).tobytes()
    if isinstance(obj, RadarImage):
        values = obj.values.astype(np.float64)
        lo, hi = obj.dbz_lo, obj.dbz_hi
    else:
        arr = np.asarray(obj)
        if arr.dtype == bool or np.issubdtype(arr.dtype, np.integer):
            if not np.all((arr == 0) | (arr == 1)):
                raise ValueOutOfRange("mask values must be 0 or 1")
            return _encode_pgm(SegMask(bits=arr))
        values = arr.astype(np.float64)
        lo, hi = -10.0, 60.0
    if values.ndim != 2:
        raise ValueOutOfRange(f"image must be 2-D, got shape {values.shape}")
    if not np.all(np.isfinite(values)) or values.min() < 0 or values.max() > 1:
        raise ValueOutOfRange("image values must lie in [0, 1]")
    h, w = values.shape
    samples = np.floor(values * 65535 + 0.5).astype(">u2")
    header = f"P5\n# dbz_lo={lo!r} dbz_hi={hi!r}\n{w} {h}\n65535\n".encode("ascii")
    return header + samples.tobytes()


def write_pgm(obj, path):
    """Write a mask (8-bit, 0/255) or a normalized image (16-bit, big-endian)."""
    data = _encode_pgm(obj)
    try:
        with open(path, "wb") as fh:
            fh.write(data)
    except OSError as exc:
        raise IoError(str(exc)) from exc


def decode_pgm(data: bytes):
    """Strict binary PGM reader; returns a SegMask or a RadarImage."""
    pos = 0
    tokens = []
    lo, hi = -10.0, 60.0
    while len(tokens) < 4:
        end = data.find(b"\n", pos)
        if end < 0:
            raise MalformedHeader("header ended before maxval")
        line = data[pos:end]
        pos = end + 1
        if line.startswith(b"#"):
            m = _DBZ_COMMENT.match(line)
            if m:
                try:
                    lo, hi = float(m.group(1)), float(m.group(2))
                except ValueError:
                    raise MalformedHeader(f"bad dBZ comment {line!r}") from None
            continue
        tokens.extend(line.split())
    if len(tokens) != 4 or tokens[0] != b"P5":
        raise MalformedHeader(f"expected 'P5 width height maxval', got {tokens!r}")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise MalformedHeader(f"non-integer header fields {tokens[1:]!r}") from None
    if w < 1 or h < 1:
        raise MalformedHeader(f"bad dimensions {w}x{h}")
    if maxval not in (255, 65535):
        raise MalformedHeader(f"maxval must be 255 (mask) or 65535 (image), got {maxval}")
    nbytes = w * h * (1 if maxval == 255 else 2)
    payload = data[pos:]
    if len(payload) != nbytes:
        raise MalformedHeader(f"payload has {len(payload)} bytes, expected {nbytes}")
    if maxval == 255:
        raw = np.frombuffer(payload, dtype=np.uint8).reshape(h, w)
        if not np.all((raw == 0) | (raw == 255)):
            raise ValueOutOfRange("mask samples must be 0 or 255")
        return SegMask(bits=(raw == 255).astype(np.uint8))
    raw = np.frombuffer(payload, dtype=">u2").reshape(h, w)
    return image_from_values(raw.astype(np.float64) / 65535.0, lo, hi)


def read_pgm(path):
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise IoError(str(exc)) from exc
    return decode_pgm(data)


def read_mask(path) -> SegMask:
    out = read_pgm(path)
    if not isinstance(out, SegMask):
        raise MalformedHeader(f"{path} is an image, not a mask")
    return out


_COLOR_STOPS = np.array([
    [0.00, 0, 0, 0],
    [0.15, 20, 40, 140],
    [0.30, 0, 160, 220],
    [0.45, 0, 200, 60],
    [0.60, 250, 230, 0],
    [0.75, 250, 120, 0],
    [1.00, 200, 0, 40],
])


def colormap(values: np.ndarray, valid: np.ndarray | None = None) -> np.ndarray:
    """Map unit values to RGB bytes for viewing; invalid pixels are gray."""
    values = np.asarray(values, dtype=np.float64)
    rgb = np.stack([np.interp(values, _COLOR_STOPS[:, 0], _COLOR_STOPS[:, k]) for k in (1, 2, 3)], axis=-1)
    rgb = np.floor(rgb + 0.5).astype(np.uint8)
    if valid is not None:
        rgb[~np.asarray(valid, dtype=bool)] = 64
    return rgb


def write_ppm(rgb: np.ndarray, path):
    h, w, _ = rgb.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(rgb, dtype=np.uint8).tobytes())


# -- checkpoints ---------------------------------------------------------------

WRCK_MAGIC = b"WRCK"
WRCK_VERSION = 1


@dataclass(eq=False)
class Checkpoint:
    tensors: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)
    version: int = WRCK_VERSION

    @classmethod
    def from_pairs(cls, pairs, metadata=None):
        tensors = {}
        for name, arr in pairs:
            if name in tensors:
                raise DuplicateName(f"duplicate tensor name {name!r}")
            tensors[name] = np.array(arr, dtype=np.float32, copy=True)
        return cls(tensors=tensors, metadata=dict(metadata or {}))

    def __eq__(self, other):
        if not isinstance(other, Checkpoint):
            return NotImplemented
        if self.version != other.version or self.metadata != other.metadata:
            return False
        if set(self.tensors) != set(other.tensors):
            return False
        return all(
            self.tensors[k].shape == other.tensors[k].shape
            and np.asarray(self.tensors[k], np.float32).tobytes() == np.asarray(other.tensors[k], np.float32).tobytes()
            for k in self.tensors
        )

    __hash__ = None


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    parts = [WRCK_MAGIC, struct.pack("<BI", WRCK_VERSION, len(ckpt.tensors))]
    for name in sorted(ckpt.tensors):
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise InvariantViolation(f"tensor name too long: {name[:40]}...")
        arr = np.asarray(ckpt.tensors[name], dtype="<f4", order="C")  # keeps 0-d tensors 0-d
        if arr.ndim > 255:
            raise InvariantViolation("too many dimensions")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.tobytes())
    lines = []
    for key in sorted(ckpt.metadata):
        value = str(ckpt.metadata[key])
        if " = " in key or "\n" in key or "\n" in value or not key.strip() or key != key.strip():
            raise InvariantViolation(f"metadata entry cannot be encoded: {key!r}")
        lines.append(f"{key} = {value}\n")
    meta = "".join(lines).encode("utf-8")
    parts.append(struct.pack("<I", len(meta)) + meta)
    return b"".join(parts)


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise TruncatedData(f"need {n} bytes at offset {self.pos}, file has {len(self.data)}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        st = struct.Struct(fmt)
        return st.unpack(self.take(st.size))


def decode_checkpoint(data: bytes) -> Checkpoint:
    data = bytes(data)
    rd = _Reader(data)
    if data[:4] != WRCK_MAGIC:
        raise BadMagic(f"expected {WRCK_MAGIC!r}, got {data[:4]!r}")
    rd.take(4)
    (version,) = rd.unpack("<B")
    if version != WRCK_VERSION:
        raise BadVersion(f"unsupported checkpoint version {version}")
    (count,) = rd.unpack("<I")
    tensors = {}
    for _ in range(count):
        (nlen,) = rd.unpack("<H")
        try:
            name = rd.take(nlen).decode("utf-8")
        except UnicodeDecodeError:
            raise InvariantViolation("tensor name is not UTF-8") from None
        if name in tensors:
            raise DuplicateName(f"duplicate tensor name {name!r}")
        (ndim,) = rd.unpack("<B")
        dims = rd.unpack(f"<{ndim}I") if ndim else ()
        size = int(np.prod(dims, dtype=np.int64)) if ndim else 1
        arr = np.frombuffer(rd.take(4 * size), dtype="<f4").reshape(dims).astype(np.float32)
        tensors[name] = arr
    (mlen,) = rd.unpack("<I")
    try:
        meta_text = rd.take(mlen).decode("utf-8")
    except UnicodeDecodeError:
        raise InvariantViolation("metadata is not UTF-8") from None
    if rd.pos != len(data):
        raise InvariantViolation(f"{len(data) - rd.pos} trailing bytes after metadata")
    metadata = {}
    for line in meta_text.splitlines():
        if not line:
            continue
        key, sep, value = line.partition(" = ")
        if not sep:
            raise InvariantViolation(f"bad metadata line {line!r}")
        metadata[key] = value
    return Checkpoint(tensors=tensors, metadata=metadata, version=version)


def save_checkpoint(ckpt: Checkpoint, path):
    data = encode_checkpoint(ckpt)
    try:
        with open(path, "wb") as fh:
            fh.write(data)
    except OSError as exc:
        raise IoError(str(exc)) from exc


def load_checkpoint(path) -> Checkpoint:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise IoError(str(exc)) from exc
    return decode_checkpoint(data)


# -- manifests ---------------------------------------------------------------

def write_manifest(entries, path):
    """One ``sweep<TAB>mask<TAB>seed`` line per sample. ``None`` masks are written as ``-``."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for sweep_path, mask_path, seed in entries:
            fh.write(f"{sweep_path}\t{mask_path if mask_path is not None else '-'}\t{seed}\n")


def read_manifest(path):
    """Return ``[(sweep_path, mask_path_or_None, seed), ...]`` with paths resolved
    relative to the manifest's directory."""
    base = os.path.dirname(os.path.abspath(path))
    entries = []
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise IoError(str(exc)) from exc
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        cols = line.split("\t")
        if len(cols) != 3:
            raise MalformedHeader(f"{path}:{lineno}: expected 3 tab-separated columns")
        sweep_path, mask_path, seed = cols
        try:
            seed = int(seed)
        except ValueError:
            raise MalformedHeader(f"{path}:{lineno}: bad seed {seed!r}") from None
        mask = None if mask_path == "-" else os.path.join(base, mask_path)
        entries.append((os.path.join(base, sweep_path), mask, seed))
    return entries
