"""Reflectivity-band labelling (noisy labels for pretraining)."""
from __future__ import annotations

import numpy as np

from .errors import DegenerateBand
from .radar import NO_ECHO, RadarImage, SegMask

BAND_LO = 8.0
BAND_HI = 16.0


def threshold_mask(image: RadarImage, lo: float = BAND_LO, hi: float = BAND_HI) -> SegMask:
    """Mark valid pixels whose dBZ lies in the closed band [lo, hi].

    Works on the exact dBZ carried by the image, never on normalized values.
    """
    if lo > hi:
        raise DegenerateBand(f"lo ({lo}) must be <= hi ({hi})")
    dbz = image.dbz.astype(np.float64)
    bits = image.valid & (dbz != NO_ECHO) & (dbz >= lo) & (dbz <= hi)
    return SegMask(bits=bits.astype(np.uint8), provenance="noisy")
