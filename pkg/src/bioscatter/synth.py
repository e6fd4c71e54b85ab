"""Synthetic polar sweeps with known bioscatter truth.

A scene is the per-gate maximum of four independently seeded layers:

* background noise (mostly NO_ECHO after the -10 dBZ floor),
* a speckled clutter disc around the radar with dBZ inside the bird band,
* rain cells well above the band,
* animal blobs whose dBZ stays inside ``animal_dbz_range``, each wrapped in a
  thin halo that decays through the lower band edge.

Only the blob discs are truth. Clutter and halo gates give the band
threshold its false positives, and rain drawn over a blob hides it from the
threshold (a miss), which is the high-recall / low-precision regime the
threshold labeller is expected to show.
"""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, fields

import numpy as np

from .errors import InvalidParams
from .radar import DBZ_MAX, DBZ_MIN, NO_ECHO, PolarSweep, SegMask, sample_polar, save_sweep

log = logging.getLogger(__name__)

BASE_TIMESTAMP = 1_700_000_000
SCAN_INTERVAL_S = 600


@dataclass(frozen=True)
class SceneParams:
    animal_blob_count: int = 6
    animal_dbz_range: tuple = (9.0, 15.0)
    animal_radius_gates: tuple = (5.0, 15.0)
    animal_min_range_gates: float = 45.0
    halo_gates: float = 2.0
    halo_floor_dbz: float = 4.0

    clutter_enabled: bool = True
    clutter_max_gates: float = 40.0
    clutter_dbz_range: tuple = (8.0, 16.0)
    clutter_density: float = 0.5

    rain_cell_count: int = 2
    rain_dbz_range: tuple = (25.0, 45.0)
    rain_radius_gates: tuple = (10.0, 30.0)

    noise_mean_dbz: float = -15.0
    noise_sigma_dbz: float = 4.0
    noise_floor_dbz: float = -10.0

    ray_count: int = 360
    gate_count: int = 150
    gate_spacing_m: float = 1000.0
    first_gate_m: float = 0.0
    elevation_deg: float = 0.5
    az0_deg: float = 0.0
    station_id: str = "SYN"

    grid: int = 256
    max_range_m: float | None = None

    def __post_init__(self):
        for name in ("animal_dbz_range", "animal_radius_gates", "clutter_dbz_range",
                     "rain_dbz_range", "rain_radius_gates"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))

    @property
    def coverage_m(self) -> float:
        if self.max_range_m is not None:
            return float(self.max_range_m)
        return self.first_gate_m + self.gate_count * self.gate_spacing_m

    def validate(self):
        def _range(name, lo_bound=DBZ_MIN, hi_bound=DBZ_MAX):
            value = getattr(self, name)
            if len(value) != 2 or not (lo_bound <= value[0] <= value[1] <= hi_bound):
                raise InvalidParams(f"{name} must be [lo, hi] with {lo_bound} <= lo <= hi <= {hi_bound}, got {value}")

        for name in ("animal_dbz_range", "clutter_dbz_range", "rain_dbz_range"):
            _range(name)
        for name in ("animal_radius_gates", "rain_radius_gates"):
            _range(name, 1e-9, float("inf"))
        if self.animal_blob_count < 0 or self.rain_cell_count < 0:
            raise InvalidParams("feature counts must be >= 0")
        if not 0.0 <= self.clutter_density <= 1.0:
            raise InvalidParams("clutter_density must be in [0, 1]")
        if self.clutter_max_gates < 0 or self.halo_gates < 0 or self.animal_min_range_gates < 0:
            raise InvalidParams("gate distances must be >= 0")
        if self.noise_sigma_dbz < 0:
            raise InvalidParams("noise_sigma_dbz must be >= 0")
        if not DBZ_MIN <= self.halo_floor_dbz <= DBZ_MAX:
            raise InvalidParams("halo_floor_dbz outside the representable dBZ range")
        if self.ray_count < 1 or self.gate_count < 1 or self.gate_spacing_m <= 0 or self.first_gate_m < 0:
            raise InvalidParams("invalid sweep geometry")
        if self.grid < 8 or self.grid % 2:
            raise InvalidParams(f"grid must be even and >= 8, got {self.grid}")
        if self.coverage_m <= self.first_gate_m:
            raise InvalidParams("max_range_m must exceed first_gate_m")

    def replace(self, **changes) -> "SceneParams":
        known = {f.name for f in fields(self)}
        bad = set(changes) - known
        if bad:
            raise InvalidParams(f"unknown scene parameters: {sorted(bad)}")
        kwargs = {f.name: getattr(self, f.name) for f in fields(self)}
        kwargs.update(changes)
        return SceneParams(**kwargs)


def _gate_xy(params: SceneParams):
    az = np.radians(params.az0_deg + np.arange(params.ray_count) * (360.0 / params.ray_count))
    rng = params.first_gate_m + np.arange(params.gate_count) * params.gate_spacing_m
    x = np.sin(az)[:, None] * rng[None, :]
    y = np.cos(az)[:, None] * rng[None, :]
    return x, y, np.broadcast_to(rng, x.shape)


def _animal_layer(params, rng, gx, gy):
    """Blob dBZ (NO_ECHO elsewhere) and the polar truth mask."""
    field_ = np.full(gx.shape, NO_ECHO)
    truth = np.zeros(gx.shape, dtype=bool)
    sp = params.gate_spacing_m
    lo, hi = params.animal_dbz_range
    max_r = params.first_gate_m + (params.gate_count - 1) * sp
    for _ in range(params.animal_blob_count):
        radius = rng.uniform(*params.animal_radius_gates) * sp
        near = params.first_gate_m + params.animal_min_range_gates * sp + radius
        far = max(near, max_r - radius)
        r0 = rng.uniform(near, far)
        az0 = rng.uniform(0.0, 2.0 * np.pi)
        peak = rng.uniform(lo, hi)
        jitter = rng.normal(0.0, 0.5, size=gx.shape)
        cx, cy = r0 * np.sin(az0), r0 * np.cos(az0)
        d = np.hypot(gx - cx, gy - cy) / radius

        taper = np.exp(-2.0 * d**2)
        edge = np.exp(-2.0)
        core = np.clip(lo + (peak - lo) * (taper - edge) / (1.0 - edge) + jitter, lo, hi)
        inside = d <= 1.0
        field_ = np.where(inside, np.maximum(field_, core), field_)
        truth |= inside

        if params.halo_gates > 0:
            frac = (d - 1.0) * radius / (params.halo_gates * sp)
            halo = lo - (lo - params.halo_floor_dbz) * frac
            in_halo = (d > 1.0) & (frac <= 1.0)
            field_ = np.where(in_halo, np.maximum(field_, halo), field_)
    return field_, truth


def _clutter_layer(params, rng, grange):
    field_ = np.full(grange.shape, NO_ECHO)
    if not params.clutter_enabled:
        return field_
    lo, hi = params.clutter_dbz_range
    reach = params.first_gate_m + params.clutter_max_gates * params.gate_spacing_m
    hit = rng.random(grange.shape) < params.clutter_density
    values = rng.uniform(lo, hi, size=grange.shape)
    return np.where(hit & (grange <= reach), values, field_)


def _rain_layer(params, rng, gx, gy):
    field_ = np.full(gx.shape, NO_ECHO)
    lo, hi = params.rain_dbz_range
    sp = params.gate_spacing_m
    max_r = params.first_gate_m + (params.gate_count - 1) * sp
    for _ in range(params.rain_cell_count):
        radius = rng.uniform(*params.rain_radius_gates) * sp
        r0 = rng.uniform(params.first_gate_m, max_r)
        az0 = rng.uniform(0.0, 2.0 * np.pi)
        peak = rng.uniform(lo, hi)
        cx, cy = r0 * np.sin(az0), r0 * np.cos(az0)
        d = np.hypot(gx - cx, gy - cy) / radius
        cell = lo + (peak - lo) * np.exp(-2.0 * d**2)
        field_ = np.where(d <= 1.0, np.maximum(field_, cell), field_)
    return field_


def _noise_layer(params, rng, shape):
    noise = rng.normal(params.noise_mean_dbz, params.noise_sigma_dbz, size=shape)
    noise = np.clip(noise, DBZ_MIN, DBZ_MAX)
    return np.where(noise < params.noise_floor_dbz, NO_ECHO, noise)


def generate_scene(params: SceneParams | None = None, seed: int = 0):
    """Return ``(sweep, truth)`` for one synthetic scene.

    Each feature class draws from its own child of ``SeedSequence(seed)`` so
    the animal layout, and hence the truth mask, does not depend on the
    clutter, rain or noise settings.
    """
    params = params or SceneParams()
    params.validate()
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    animals, clutter, rain, noise = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(4))
    gx, gy, grange = _gate_xy(params)

    animal_field, truth_polar = _animal_layer(params, animals, gx, gy)
    layers = [
        _noise_layer(params, noise, gx.shape),
        _clutter_layer(params, clutter, grange),
        _rain_layer(params, rain, gx, gy),
        animal_field,
    ]
    refl = np.maximum.reduce(layers).astype(np.float32)

    sweep = PolarSweep(
        station_id=params.station_id,
        timestamp=BASE_TIMESTAMP,
        elevation_deg=params.elevation_deg,
        az0_deg=params.az0_deg,
        first_gate_m=params.first_gate_m,
        gate_spacing_m=params.gate_spacing_m,
        reflectivity=refl,
    )
    bits, _ = sample_polar(truth_polar, sweep, params.grid, params.coverage_m, fill=False)
    return sweep, SegMask(bits=bits.astype(np.uint8), provenance="synthetic-truth")


MANIFEST_NAME = "manifest.tsv"


def generate_corpus(n: int, params: SceneParams | None, seed: int, out_dir) -> list:
    """Write ``n`` sweeps, truth masks and a manifest into ``out_dir``.

    Sample ``i`` uses seed ``seed + i``. Manifest paths are relative to
    ``out_dir`` so a corpus can be moved without rewriting it. Returns the
    manifest entries as ``(sweep_path, mask_path, seed)`` with absolute paths.
    """
    from .dataio import write_manifest, write_pgm

    if n < 1:
        raise InvalidParams(f"corpus size must be >= 1, got {n}")
    params = params or SceneParams()
    params.validate()
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for i in range(n):
        sample_seed = seed + i
        sweep, truth = generate_scene(params, sample_seed)
        sweep = PolarSweep(
            station_id=sweep.station_id,
            timestamp=BASE_TIMESTAMP + i * SCAN_INTERVAL_S,
            elevation_deg=sweep.elevation_deg,
            az0_deg=sweep.az0_deg,
            first_gate_m=sweep.first_gate_m,
            gate_spacing_m=sweep.gate_spacing_m,
            reflectivity=sweep.reflectivity,
        )
        sweep_name = f"sweep_{i:05d}.rsef"
        mask_name = f"truth_{i:05d}.pgm"
        save_sweep(sweep, os.path.join(out_dir, sweep_name))
        write_pgm(truth, os.path.join(out_dir, mask_name))
        entries.append((sweep_name, mask_name, sample_seed))
        log.debug("wrote sample %d (seed %d)", i, sample_seed)
    write_manifest(entries, os.path.join(out_dir, MANIFEST_NAME))
    return [(os.path.join(out_dir, s), os.path.join(out_dir, m), sd) for s, m, sd in entries]
