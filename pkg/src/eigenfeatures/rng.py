"""Named, seeded random streams.

Every stream is a numpy ``Generator`` over PCG64 (128-bit state, 64-bit
output) seeded from ``SeedSequence([seed, crc32(name)])``, so a stage can be
reproduced on its own from the global seed and its stream name.
"""

import zlib

import numpy as np

from .errors import ConfigError


def stream(seed: int, name: str, *extra: int) -> np.random.Generator:
    if seed < 0:
        raise ConfigError("seed must be non-negative")
    key = [int(seed), zlib.crc32(name.encode("utf-8")), *(int(e) for e in extra)]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(key)))
