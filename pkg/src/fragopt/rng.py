"""Counter-based random streams (Philox4x32-10), vectorized over replicas.

Every draw is a pure function of ``(seed, replica, event, stream)``, so a
replica produces the same numbers whether it runs alone, in a batch of a
million, or on another worker.
"""
from __future__ import annotations

import numpy as np

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK32 = np.uint64(0xFFFFFFFF)
_SHIFT = np.uint64(32)
_ROUNDS = 10


def philox4x32(counter, key):
    """Philox4x32 with 10 rounds.

    ``counter`` is a sequence of four uint32 arrays and ``key`` a sequence of
    two; all broadcast together. Returns a tuple of four uint32 arrays.
    """
    c0, c1, c2, c3 = (np.asarray(c, dtype=np.uint64) & _MASK32 for c in counter)
    k0, k1 = (np.asarray(k, dtype=np.uint64) & _MASK32 for k in key)
    c0, c1, c2, c3, k0, k1 = np.broadcast_arrays(c0, c1, c2, c3, k0, k1)
    k0 = k0.copy()
    k1 = k1.copy()
    for r in range(_ROUNDS):
        if r:
            k0 = (k0 + _W0) & _MASK32
            k1 = (k1 + _W1) & _MASK32
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0, lo0 = p0 >> _SHIFT, p0 & _MASK32
        hi1, lo1 = p1 >> _SHIFT, p1 & _MASK32
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
    return tuple(c.astype(np.uint32) for c in (c0, c1, c2, c3))


def _to_unit(hi, lo):
    # 53 random bits, shifted off zero: result lies in (0, 1).
    bits = (hi.astype(np.uint64) << _SHIFT) | lo.astype(np.uint64)
    return ((bits >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def uniform_pair(seed: int, replica, event, stream: int = 0):
    """Two independent U(0,1) arrays for each ``(replica, event)`` pair.

    ``replica`` and ``event`` broadcast together. ``stream`` separates draws
    made for different purposes at the same event.
    """
    seed = int(seed)
    if seed < 0 or seed >= 2**64:
        raise ValueError("seed must fit in 64 unsigned bits")
    replica = np.asarray(replica, dtype=np.uint64)
    event = np.asarray(event, dtype=np.uint64)
    ctr = (
        event & _MASK32,
        event >> _SHIFT,
        np.uint64(stream),
        np.uint64(seed >> 32),
    )
    key = (np.uint64(seed & 0xFFFFFFFF), replica)
    x0, x1, x2, x3 = philox4x32(ctr, key)
    return _to_unit(x0, x1), _to_unit(x2, x3)


class Stream:
    """Sequential view of one replica's stream, for scalar code paths."""

    def __init__(self, seed: int, replica: int = 0, stream: int = 0):
        self.seed = int(seed)
        self.replica = int(replica)
        self.stream = int(stream)
        self._event = 0
        self._buf: list[float] = []

    def random(self) -> float:
        if not self._buf:
            u, v = uniform_pair(self.seed, self.replica, self._event, self.stream)
            self._event += 1
            self._buf = [float(v), float(u)]
        return self._buf.pop()
