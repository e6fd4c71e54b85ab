import math
import struct

import numpy as np
import pytest

from bioscatter.errors import (
    BadMagic,
    BadVersion,
    DegenerateRange,
    EmptyCoverage,
    InvalidGrid,
    InvariantViolation,
    TruncatedData,
)
from bioscatter.radar import (
    HEADER_SIZE,
    NO_ECHO,
    PolarSweep,
    normalize_dbz,
    parse_sweep,
    pixel_geometry,
    render_cartesian,
    write_sweep,
)

from conftest import random_sweep, uniform_sweep


def _oracle_bytes(s):
    # independent encoder built straight from the field list
    sid = s.station_id.encode("utf-8")
    head = b"RSEF" + bytes([1]) + struct.pack("<II", *s.reflectivity.shape)
    head += struct.pack("<dddd", s.elevation_deg, s.az0_deg, s.first_gate_m, s.gate_spacing_m)
    head += struct.pack("<qH", s.timestamp, len(sid)) + sid
    return head + b"".join(struct.pack("<f", float(v)) for v in s.reflectivity.ravel())


def test_minimal_sweep_parses():
    s = PolarSweep("X", 0, 0.5, 0.0, 0.0, 250.0, [[10.0]])
    data = write_sweep(s)
    assert len(data) == HEADER_SIZE + 1 + 4
    back = parse_sweep(data)
    assert back.ray_count == 1 and back.gate_count == 1
    assert back.reflectivity[0, 0] == 10.0


def test_write_matches_independent_encoder(rng):
    for _ in range(20):
        s = random_sweep(rng)
        assert write_sweep(s) == _oracle_bytes(s)


def test_round_trip_random_files(rng):
    for _ in range(100):
        s = random_sweep(rng)
        b = write_sweep(s)
        assert write_sweep(parse_sweep(b)) == b
        assert parse_sweep(b) == s
        assert write_sweep(s) == b


def test_bad_magic_and_version():
    b = write_sweep(uniform_sweep(5.0, rays=2, gates=3))
    with pytest.raises(BadMagic):
        parse_sweep(b"RSEX" + b[4:])
    with pytest.raises(BadVersion):
        parse_sweep(b[:4] + bytes([2]) + b[5:])


def test_truncated_payload_and_header():
    b = write_sweep(uniform_sweep(5.0, rays=2, gates=3))
    with pytest.raises(TruncatedData):
        parse_sweep(b[:-1])
    with pytest.raises(TruncatedData):
        parse_sweep(b[:20])


def test_trailing_bytes_rejected():
    b = write_sweep(uniform_sweep(5.0, rays=2, gates=3))
    with pytest.raises(InvariantViolation):
        parse_sweep(b + b"\0")


def test_invariants_enforced():
    with pytest.raises(InvariantViolation):
        PolarSweep("X", 0, 0.5, 0.0, 0.0, 0.0, [[1.0]])
    with pytest.raises(InvariantViolation):
        PolarSweep("X", 0, 91.0, 0.0, 0.0, 1.0, [[1.0]])
    with pytest.raises(InvariantViolation):
        PolarSweep("X", 0, 0.5, 0.0, 0.0, 1.0, [[81.0]])
    with pytest.raises(InvariantViolation):
        PolarSweep("X", 0, 0.5, 0.0, 0.0, 1.0, [[np.nan]])
    # corrupt spacing inside otherwise valid bytes
    b = bytearray(write_sweep(uniform_sweep(5.0, rays=1, gates=1)))
    b[37:45] = struct.pack("<d", -1.0)
    with pytest.raises(InvariantViolation):
        parse_sweep(bytes(b))


def test_normalize_examples():
    assert normalize_dbz(-10, -10, 60) == 0.0
    assert normalize_dbz(60, -10, 60) == 1.0
    assert normalize_dbz(25, -10, 60) == 0.5
    assert normalize_dbz(NO_ECHO) == 0.0
    assert normalize_dbz(200) == 1.0
    with pytest.raises(DegenerateRange):
        normalize_dbz(0, 5, 5)


def test_normalize_monotone_and_idempotent_at_endpoints():
    z = np.linspace(-50, 90, 2001)
    v = normalize_dbz(z)
    assert np.all(np.diff(v) >= 0)
    for end in (0.0, 1.0):
        assert normalize_dbz(normalize_dbz(end, 0, 1), 0, 1) == end


def test_axis_aligned_geometry():
    n, max_range = 256, 128_000.0
    x, y, rng_, az = pixel_geometry(n, max_range)
    assert y[28, 128] == 100_000.0 and x[28, 128] == 0.0 and az[28, 128] == 0.0
    assert x[128, 228] == 100_000.0 and az[128, 228] == 90.0
    assert rng_[0, 0] == pytest.approx(math.hypot(128_000, 128_000))

    refl = np.full((360, 200), NO_ECHO, np.float32)
    refl[0, 100] = 25.0
    refl[90, 100] = 60.0
    s = PolarSweep("T", 0, 0.5, 0.0, 0.0, 1000.0, refl)
    img = render_cartesian(s, n, max_range)
    assert img.dbz[28, 128] == 25.0 and img.values[28, 128] == 0.5
    assert img.dbz[128, 228] == 60.0
    assert not img.valid[0, 0] and img.values[0, 0] == 0.0
    # NO_ECHO inside coverage: valid, value 0
    assert img.valid[60, 128] and img.values[60, 128] == 0.0


def test_nearest_neighbour_matches_brute_force(rng):
    s = random_sweep(rng, rays=37, gates=45)
    n, max_range = 32, s.first_gate_m + 40 * s.gate_spacing_m
    img = render_cartesian(s, n, max_range)
    res = 2 * max_range / n
    for r in range(n):
        for c in range(n):
            x, y = (c - n // 2) * res, (n // 2 - r) * res
            rng_ = math.hypot(x, y)
            az = math.degrees(math.atan2(x, y)) % 360.0
            ray = math.floor((az - s.az0_deg) / (360.0 / 37) + 0.5) % 37
            gate = math.floor((rng_ - s.first_gate_m) / s.gate_spacing_m + 0.5)
            ok = s.first_gate_m <= rng_ <= max_range and 0 <= gate < 45
            assert img.valid[r, c] == ok
            if ok:
                assert img.dbz[r, c] == s.reflectivity[ray, gate]
                assert img.values[r, c] == np.float32(normalize_dbz(float(s.reflectivity[ray, gate])))


@pytest.mark.parametrize("n", [128, 256])
def test_coverage_close_to_circle_area(n):
    s = uniform_sweep(20.0, rays=720, gates=400, spacing=500.0)
    max_range = 150_000.0
    img = render_cartesian(s, n, max_range)
    res = 2 * max_range / n
    expected = math.pi * (max_range / res) ** 2
    assert abs(img.valid.sum() - expected) / expected < 0.02


def test_render_monotone_in_single_gate(rng):
    base = random_sweep(rng, rays=90, gates=60, no_echo_frac=0.0)
    for _ in range(10):
        a, g = int(rng.integers(90)), int(rng.integers(60))
        refl = base.reflectivity.copy()
        refl[a, g] = min(80.0, refl[a, g] + float(rng.uniform(0, 30)))
        bumped = PolarSweep(base.station_id, base.timestamp, base.elevation_deg, base.az0_deg,
                            base.first_gate_m, base.gate_spacing_m, refl)
        mr = base.first_gate_m + 60 * base.gate_spacing_m
        assert np.all(render_cartesian(bumped, 64, mr).values >= render_cartesian(base, 64, mr).values)


def test_render_errors():
    s = uniform_sweep(10.0)
    with pytest.raises(InvalidGrid):
        render_cartesian(s, 7, 1000.0)
    with pytest.raises(InvalidGrid):
        render_cartesian(s, 6, 1000.0)
    with pytest.raises(InvalidGrid):
        render_cartesian(uniform_sweep(10.0, first_gate=5000.0), 16, 4000.0)
    far = uniform_sweep(10.0, rays=4, gates=1, first_gate=1000.0, spacing=10.0)
    with pytest.raises(EmptyCoverage):
        render_cartesian(far, 8, 1100.0)
