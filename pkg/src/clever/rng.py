"""Counter-based, splittable random streams.

Every random draw in the package is a function of ``(seed, stream key,
draw index)``.  Streams are keyed by tuples such as ``(epoch, sample, view)``
so that the values a sample receives never depend on which worker produced
it or in which order samples were processed.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1


def _mix(stream_id: int, key: int) -> int:
    digest = hashlib.blake2b(struct.pack("<QQ", stream_id & _MASK64, key & _MASK64), digest_size=8)
    return int.from_bytes(digest.digest(), "little")


@dataclass(frozen=True)
class RngStream:
    seed: int
    stream_id: int = 0

    def child(self, *keys: int) -> "RngStream":
        """Derive an independent sub-stream; ``child(a, b) == child(a).child(b)``."""
        sid = self.stream_id
        for k in keys:
            sid = _mix(sid, int(k))
        return RngStream(self.seed, sid)

    def generator(self) -> np.random.Generator:
        # Philox is counter based: key = (seed, stream), counter = draw index.
        key = np.array([self.seed & _MASK64, self.stream_id], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None):
        return self.generator().uniform(low, high, size)
