"""Split random streams keyed by (seed, episode, purpose).

Every stream is a NumPy ``Generator`` over the Philox4x64 counter-based bit
generator, keyed through a ``SeedSequence`` built from integers only.  Both
are specified bit-for-bit by NumPy, so a given key yields the same draws on
every platform.  Purposes are mapped to integers with CRC-32 so that adding a
new purpose never shifts existing streams.
"""

from __future__ import annotations

import zlib

import numpy as np

_MASK64 = (1 << 64) - 1


def purpose_code(purpose: str | int) -> int:
    if isinstance(purpose, int):
        return purpose & _MASK64
    return zlib.crc32(purpose.encode("utf-8"))


def stream(seed: int, *key: str | int) -> np.random.Generator:
    entropy = [int(seed) & _MASK64] + [purpose_code(k) for k in key]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))
