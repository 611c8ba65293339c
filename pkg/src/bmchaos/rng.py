"""Counter-based random streams.

Every random draw in the package comes from a Philox generator keyed by
``(seed, stream_id)``.  Work is split into logical tasks and each task derives
its own stream id from labels, so results never depend on how tasks are
scheduled across workers.
"""

import hashlib

import numpy as np

MASK64 = (1 << 64) - 1

#: Alias used in signatures: a numpy Generator backed by Philox.
RngStream = np.random.Generator


def rng_stream_for(seed: int, stream_id: int) -> RngStream:
    """Return the Philox stream addressed by ``(seed, stream_id)``.

    Both integers are reduced modulo 2**64 and form the 128-bit Philox key,
    so identical inputs give identical sequences on every platform.
    """
    key = np.array([int(seed) & MASK64, int(stream_id) & MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def stream_id(*labels) -> int:
    """Stable 64-bit stream id derived from arbitrary printable labels."""
    digest = hashlib.blake2b(repr(labels).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def substream(seed: int, *labels) -> RngStream:
    return rng_stream_for(seed, stream_id(*labels))
