"""Counter-based random streams.

Every stream is a Philox generator keyed by (master seed, work-unit index,
purpose). Photon ``i`` of a transport stream owns a fixed block of the
counter space, so its draws do not depend on batching or on which thread
runs the work unit.
"""

from __future__ import annotations

import numpy as np

# purpose tags; part of the key, never reorder
EMISSION = 1
TRANSPORT = 2
DARK = 3
SPLIT = 4

# uniforms consumed per transported photon; Philox4x64 yields 4 per counter step
DRAWS_PER_PHOTON = 8
_STEPS_PER_PHOTON = DRAWS_PER_PHOTON // 4


def stream(seed: int, unit: int, purpose: int) -> np.random.Generator:
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(unit), int(purpose)])
    return np.random.Generator(np.random.Philox(ss))


def photon_stream(seed: int, unit: int, photon_index: int) -> np.random.Generator:
    """Transport generator positioned at the first draw of one photon."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(unit), TRANSPORT])
    bg = np.random.Philox(ss)
    bg.advance(_STEPS_PER_PHOTON * int(photon_index))
    return np.random.Generator(bg)
