"""Counter-based random streams.

Every consumer of randomness asks for a stream keyed by the global seed plus
a tuple of integers naming where it is used (layer, epoch, batch, doc, ...).
Streams are independent of the order in which they are requested, so results
do not depend on evaluation order or worker count.
"""

import zlib

import numpy as np


def key_of(name):
    """Stable 32-bit integer key for a string label."""
    return zlib.crc32(name.encode("utf-8"))


def stream(seed, *keys):
    """Return a Philox-backed generator for ``(seed, *keys)``.

    String keys are hashed with :func:`key_of`; integers are used directly.
    """
    words = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for k in keys:
        words.append(key_of(k) if isinstance(k, str) else int(k) & 0xFFFFFFFFFFFFFFFF)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))
