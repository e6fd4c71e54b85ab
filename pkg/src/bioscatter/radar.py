"""Polar sweep data model, the RSEF exchange format and Cartesian rendering.

RSEF layout (little-endian)::

    0   4s   magic "RSEF"
    4   u8   version (1)
    5   u32  ray count A
    9   u32  gate count G
    13  f64  elevation (deg)
    21  f64  azimuth of ray 0 (deg, clockwise from north)
    29  f64  range of first gate (m)
    37  f64  gate spacing (m)
    45  i64  timestamp (UTC seconds)
    53  u16  station id length L
    55  L    station id, UTF-8
    ..  A*G  float32 reflectivity, ray-major
"""
from __future__ import annotations

import functools
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BadMagic,
    BadVersion,
    DegenerateRange,
    EmptyCoverage,
    InvalidGrid,
    InvariantViolation,
    TruncatedData,
)

NO_ECHO = -9999.0
DBZ_MIN = -40.0
DBZ_MAX = 80.0
DEFAULT_DBZ_LO = -10.0
DEFAULT_DBZ_HI = 60.0

RSEF_MAGIC = b"RSEF"
RSEF_VERSION = 1
_HEADER = struct.Struct("<4sBIIddddqH")
HEADER_SIZE = _HEADER.size  # without the station id bytes


@dataclass(frozen=True, eq=False)
class PolarSweep:
    """One elevation scan of reflectivity on a ray x gate grid."""

    station_id: str
    timestamp: int
    elevation_deg: float
    az0_deg: float
    first_gate_m: float
    gate_spacing_m: float
    reflectivity: np.ndarray = field(repr=False)

    def __post_init__(self):
        refl = np.array(self.reflectivity, dtype=np.float32, copy=True)
        refl.setflags(write=False)
        object.__setattr__(self, "reflectivity", refl)
        object.__setattr__(self, "timestamp", int(self.timestamp))
        for name in ("elevation_deg", "az0_deg", "first_gate_m", "gate_spacing_m"):
            object.__setattr__(self, name, float(getattr(self, name)))
        self.validate()

    @property
    def ray_count(self) -> int:
        return self.reflectivity.shape[0]

    @property
    def gate_count(self) -> int:
        return self.reflectivity.shape[1]

    def ray_azimuths(self) -> np.ndarray:
        return np.mod(self.az0_deg + np.arange(self.ray_count) * (360.0 / self.ray_count), 360.0)

    def validate(self):
        refl = self.reflectivity
        if refl.ndim != 2 or refl.shape[0] < 1 or refl.shape[1] < 1:
            raise InvariantViolation(f"reflectivity must be a non-empty 2-D array, got shape {refl.shape}")
        if refl.shape[0] > 0xFFFFFFFF or refl.shape[1] > 0xFFFFFFFF:
            raise InvariantViolation("ray/gate count does not fit in u32")
        if not (0.0 <= self.elevation_deg <= 90.0):
            raise InvariantViolation(f"elevation_deg {self.elevation_deg} outside [0, 90]")
        if not (0.0 <= self.az0_deg < 360.0):
            raise InvariantViolation(f"az0_deg {self.az0_deg} outside [0, 360)")
        if not (math.isfinite(self.first_gate_m) and self.first_gate_m >= 0.0):
            raise InvariantViolation(f"first_gate_m must be >= 0, got {self.first_gate_m}")
        if not (math.isfinite(self.gate_spacing_m) and self.gate_spacing_m > 0.0):
            raise InvariantViolation(f"gate_spacing_m must be > 0, got {self.gate_spacing_m}")
        if not (-(2**63) <= self.timestamp < 2**63):
            raise InvariantViolation("timestamp does not fit in i64")
        if len(self.station_id.encode("utf-8")) > 0xFFFF:
            raise InvariantViolation("station_id longer than 65535 bytes")
        echo = refl[refl != np.float32(NO_ECHO)]
        if echo.size and not (np.all(np.isfinite(echo)) and echo.min() >= DBZ_MIN and echo.max() <= DBZ_MAX):
            raise InvariantViolation(f"reflectivity values must be NO_ECHO or within [{DBZ_MIN}, {DBZ_MAX}] dBZ")

    def __eq__(self, other):
        if not isinstance(other, PolarSweep):
            return NotImplemented
        return (
            self.station_id == other.station_id
            and self.timestamp == other.timestamp
            and self.elevation_deg == other.elevation_deg
            and self.az0_deg == other.az0_deg
            and self.first_gate_m == other.first_gate_m
            and self.gate_spacing_m == other.gate_spacing_m
            and self.reflectivity.shape == other.reflectivity.shape
            and self.reflectivity.tobytes() == other.reflectivity.tobytes()
        )

    __hash__ = None


def write_sweep(sweep: PolarSweep) -> bytes:
    """Serialize a sweep to canonical RSEF bytes."""
    sweep.validate()
    sid = sweep.station_id.encode("utf-8")
    header = _HEADER.pack(
        RSEF_MAGIC,
        RSEF_VERSION,
        sweep.ray_count,
        sweep.gate_count,
        sweep.elevation_deg,
        sweep.az0_deg,
        sweep.first_gate_m,
        sweep.gate_spacing_m,
        sweep.timestamp,
        len(sid),
    )
    payload = np.ascontiguousarray(sweep.reflectivity, dtype="<f4").tobytes()
    return header + sid + payload


def parse_sweep(data: bytes) -> PolarSweep:
    """Inverse of :func:`write_sweep`.

    Trailing bytes after the payload are rejected so that only canonical
    files round-trip.
    """
    data = bytes(data)
    if len(data) < 4 or data[:4] != RSEF_MAGIC:
        raise BadMagic(f"expected {RSEF_MAGIC!r}, got {data[:4]!r}")
    if len(data) < 5:
        raise TruncatedData("missing version byte")
    if data[4] != RSEF_VERSION:
        raise BadVersion(f"unsupported RSEF version {data[4]}")
    if len(data) < HEADER_SIZE:
        raise TruncatedData("header shorter than fixed layout")
    _, _, a, g, elev, az0, first, spacing, ts, sid_len = _HEADER.unpack_from(data, 0)
    off = HEADER_SIZE
    if len(data) < off + sid_len:
        raise TruncatedData("station id truncated")
    try:
        sid = data[off : off + sid_len].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise InvariantViolation(f"station id is not UTF-8: {exc}") from None
    off += sid_len
    need = a * g * 4
    if len(data) - off < need:
        raise TruncatedData(f"payload has {len(data) - off} bytes, need {need}")
    if len(data) - off > need:
        raise InvariantViolation(f"{len(data) - off - need} trailing bytes after payload")
    if a < 1 or g < 1:
        raise InvariantViolation(f"ray and gate counts must be positive, got {a}x{g}")
    refl = np.frombuffer(data, dtype="<f4", count=a * g, offset=off).reshape(a, g)
    return PolarSweep(
        station_id=sid,
        timestamp=ts,
        elevation_deg=elev,
        az0_deg=az0,
        first_gate_m=first,
        gate_spacing_m=spacing,
        reflectivity=refl.astype(np.float32),
    )


def read_sweep(path) -> PolarSweep:
    with open(path, "rb") as fh:
        return parse_sweep(fh.read())


def save_sweep(sweep: PolarSweep, path):
    with open(path, "wb") as fh:
        fh.write(write_sweep(sweep))


def normalize_dbz(z, dbz_lo: float = DEFAULT_DBZ_LO, dbz_hi: float = DEFAULT_DBZ_HI):
    """Affine map of dBZ onto [0, 1], clamped. NO_ECHO maps to 0.

    Accepts scalars or arrays; arrays come back as float64.
    """
    if not dbz_lo < dbz_hi:
        raise DegenerateRange(f"dbz_lo ({dbz_lo}) must be < dbz_hi ({dbz_hi})")
    z_arr = np.asarray(z, dtype=np.float64)
    out = np.clip((z_arr - dbz_lo) / (dbz_hi - dbz_lo), 0.0, 1.0)
    out = np.where(z_arr == NO_ECHO, 0.0, out)
    if np.ndim(z) == 0:
        return float(out)
    return out


@dataclass(frozen=True, eq=False)
class RadarImage:
    """N x N normalized reflectivity image.

    ``dbz`` keeps the exact sampled gate value per pixel (NO_ECHO where there
    was no echo or the pixel is outside coverage) so that banded labelling
    never has to invert the clamped normalization.
    """

    values: np.ndarray = field(repr=False)
    valid: np.ndarray = field(repr=False)
    dbz: np.ndarray = field(repr=False)
    dbz_lo: float = DEFAULT_DBZ_LO
    dbz_hi: float = DEFAULT_DBZ_HI
    source: str = ""

    def __post_init__(self):
        if not self.dbz_lo < self.dbz_hi:
            raise DegenerateRange(f"dbz_lo ({self.dbz_lo}) must be < dbz_hi ({self.dbz_hi})")
        for name, dtype in (("values", np.float32), ("valid", bool), ("dbz", np.float32)):
            arr = np.array(getattr(self, name), dtype=dtype, copy=True)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        n = self.values.shape
        if len(n) != 2 or n[0] != n[1] or self.valid.shape != n or self.dbz.shape != n:
            raise InvariantViolation("values, valid and dbz must be matching N x N arrays")
        if np.any(self.values < 0) or np.any(self.values > 1):
            raise InvariantViolation("image values must lie in [0, 1]")
        if np.any(self.values[~self.valid] != 0):
            raise InvariantViolation("invalid pixels must have value 0")

    @property
    def size(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True, eq=False)
class SegMask:
    bits: np.ndarray = field(repr=False)
    provenance: str = ""

    def __post_init__(self):
        bits = np.array(self.bits, copy=True)
        if bits.ndim != 2 or bits.shape[0] != bits.shape[1]:
            raise InvariantViolation(f"mask must be N x N, got shape {bits.shape}")
        if not np.all((bits == 0) | (bits == 1)):
            raise InvariantViolation("mask values must be 0 or 1")
        bits = bits.astype(np.uint8)
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @property
    def size(self) -> int:
        return self.bits.shape[0]

    def __eq__(self, other):
        if not isinstance(other, SegMask):
            return NotImplemented
        return self.bits.shape == other.bits.shape and bool(np.array_equal(self.bits, other.bits))

    __hash__ = None


def _round_half_up(x):
    return np.floor(x + 0.5).astype(np.int64)


def pixel_geometry(n: int, max_range_m: float):
    """Planar x (east), y (north), range and azimuth for every pixel."""
    res = 2.0 * max_range_m / n
    idx = np.arange(n, dtype=np.float64)
    x = np.broadcast_to((idx - n // 2) * res, (n, n))
    y = np.broadcast_to(((n // 2) - idx)[:, None] * res, (n, n))
    rng = np.hypot(x, y)
    az = np.mod(np.degrees(np.arctan2(x, y)), 360.0)
    return x, y, rng, az


@functools.lru_cache(maxsize=32)
def _lookup(n, max_range_m, rays, gates, az0, first_gate_m, spacing):
    _, _, rng, az = pixel_geometry(n, max_range_m)
    ray = np.mod(_round_half_up((az - az0) / (360.0 / rays)), rays)
    gate = _round_half_up((rng - first_gate_m) / spacing)
    inside = (rng >= first_gate_m) & (rng <= max_range_m) & (gate >= 0) & (gate < gates)
    gate = np.where(inside, gate, 0)
    for arr in (ray, gate, inside):
        arr.setflags(write=False)
    return ray, gate, inside


def grid_lookup(sweep_shape, az0_deg, first_gate_m, gate_spacing_m, n, max_range_m):
    """Nearest (ray, gate) index per pixel plus the coverage mask.

    Cached per geometry so corpora that share a scan strategy only pay for
    the trigonometry once.
    """
    _check_grid(n, max_range_m, first_gate_m)
    rays, gates = sweep_shape
    return _lookup(int(n), float(max_range_m), int(rays), int(gates), float(az0_deg),
                   float(first_gate_m), float(gate_spacing_m))


def _check_grid(n, max_range_m, first_gate_m):
    if n < 8 or n % 2:
        raise InvalidGrid(f"grid size must be even and >= 8, got {n}")
    if not max_range_m > first_gate_m:
        raise InvalidGrid(f"max_range_m ({max_range_m}) must exceed first_gate_m ({first_gate_m})")


def sample_polar(field_: np.ndarray, sweep: PolarSweep, n: int, max_range_m: float, fill=0):
    """Nearest-neighbour sample of any A x G array onto the sweep's grid."""
    ray, gate, inside = grid_lookup(sweep.reflectivity.shape, sweep.az0_deg, sweep.first_gate_m,
                                    sweep.gate_spacing_m, n, max_range_m)
    out = np.asarray(field_)[ray, gate]
    return np.where(inside, out, fill), inside


def render_cartesian(sweep: PolarSweep, n: int = 256, max_range_m: float | None = None,
                     dbz_lo: float = DEFAULT_DBZ_LO, dbz_hi: float = DEFAULT_DBZ_HI) -> RadarImage:
    """Render a sweep onto an N x N Cartesian grid by nearest neighbour.

    Pixel (r, c) sits at x = (c - N/2)·res east and y = (N/2 - r)·res north
    with res = 2·max_range_m/N. Pixels out of range or beyond the last gate
    are invalid; NO_ECHO gates inside coverage are valid with value 0.
    When ``max_range_m`` is omitted the far edge of the last gate is used.
    """
    if max_range_m is None:
        max_range_m = sweep.first_gate_m + sweep.gate_count * sweep.gate_spacing_m
    if not dbz_lo < dbz_hi:
        raise DegenerateRange(f"dbz_lo ({dbz_lo}) must be < dbz_hi ({dbz_hi})")
    dbz, inside = sample_polar(sweep.reflectivity, sweep, n, max_range_m, fill=np.float32(NO_ECHO))
    if not inside.any():
        raise EmptyCoverage("no pixel of the grid falls inside radar coverage")
    values = np.where(inside, normalize_dbz(dbz, dbz_lo, dbz_hi), 0.0)
    return RadarImage(
        values=values.astype(np.float32),
        valid=inside,
        dbz=dbz.astype(np.float32),
        dbz_lo=dbz_lo,
        dbz_hi=dbz_hi,
        source=f"{sweep.station_id}@{sweep.timestamp}",
    )


def image_from_values(values: np.ndarray, dbz_lo: float = DEFAULT_DBZ_LO, dbz_hi: float = DEFAULT_DBZ_HI,
                      valid: np.ndarray | None = None, source: str = "") -> RadarImage:
    """Build an image from normalized values alone (e.g. a 16-bit PGM).

    dBZ is recovered through the inverse affine map, so values at the clamp
    limits are ambiguous. Zero pixels are treated as NO_ECHO.
    """
    values = np.asarray(values, dtype=np.float32)
    if valid is None:
        valid = np.ones(values.shape, dtype=bool)
    dbz = np.where(values > 0, dbz_lo + values.astype(np.float64) * (dbz_hi - dbz_lo), NO_ECHO)
    return RadarImage(values=np.where(valid, values, 0), valid=valid, dbz=dbz.astype(np.float32),
                      dbz_lo=dbz_lo, dbz_hi=dbz_hi, source=source)
