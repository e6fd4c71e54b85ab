import numpy as np
import pytest

from bioscatter.errors import DegenerateBand
from bioscatter.labels import threshold_mask
from bioscatter.radar import NO_ECHO, PolarSweep, render_cartesian


def _image_with(values, n=16):
    refl = np.asarray(values, np.float32).reshape(1, -1).repeat(36, axis=0)
    s = PolarSweep("T", 0, 0.5, 0.0, 0.0, 1000.0, refl)
    return render_cartesian(s, n, 1000.0 * refl.shape[1])


def _brute(img, lo, hi):
    out = np.zeros(img.dbz.shape, np.uint8)
    for r in range(img.dbz.shape[0]):
        for c in range(img.dbz.shape[1]):
            z = float(img.dbz[r, c])
            out[r, c] = int(bool(img.valid[r, c]) and z != NO_ECHO and lo <= z <= hi)
    return out


def random_band_image(rng, n=64):
    pool = np.array([8.0, 16.0, 16.01, 7.99, 10.0, NO_ECHO], np.float32)
    refl = rng.uniform(-40, 80, (90, 40)).astype(np.float32)
    pick = rng.random(refl.shape) < 0.3
    refl[pick] = rng.choice(pool, size=int(pick.sum()))
    s = PolarSweep("T", 0, 0.5, float(rng.uniform(0, 360)), 0.0, 1000.0, refl)
    return render_cartesian(s, n, 40_000.0)


def test_band_examples():
    img = _image_with([10.0, 16.0, 16.01, NO_ECHO, 8.0, 7.99, 60.0, -5.0])
    m = threshold_mask(img)
    for value in (10.0, 16.0, 8.0):
        sel = img.valid & (img.dbz == np.float32(value))
        assert sel.any() and np.all(m.bits[sel] == 1)
    for value in (16.01, NO_ECHO, 7.99, 60.0, -5.0):
        sel = img.valid & (img.dbz == np.float32(value))
        assert sel.any() and np.all(m.bits[sel] == 0)
    assert np.all(m.bits[~img.valid] == 0)
    assert m.provenance == "noisy"


def test_matches_brute_force_oracle(rng):
    for _ in range(50):
        img = random_band_image(rng)
        lo, hi = 8.0, 16.0
        assert np.array_equal(threshold_mask(img, lo, hi).bits, _brute(img, lo, hi))
        assert (img.dbz == 8.0).any() and (img.dbz == 16.0).any()


def test_idempotent_and_monotone_in_band(rng):
    img = random_band_image(rng)
    assert threshold_mask(img) == threshold_mask(img)
    narrow = threshold_mask(img, 10, 14).bits
    wide = threshold_mask(img, 8, 16).bits
    wider = threshold_mask(img, 0, 30).bits
    assert np.all(wide >= narrow) and np.all(wider >= wide)


def test_degenerate_band():
    img = _image_with([10.0])
    with pytest.raises(DegenerateBand):
        threshold_mask(img, 16, 8)
    point = threshold_mask(img, 10, 10)
    assert point.bits.sum() == (img.valid & (img.dbz == 10.0)).sum()
