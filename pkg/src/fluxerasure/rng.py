"""Counter-based random streams (Philox4x32-10).

Every random number is a pure function of ``(seed, counter)``, so an
ensemble can be split across workers in any way and still reproduce the
same draws.  The 128-bit counter is laid out as four 32-bit words::

    word 0  draw index inside a stream
    word 1  shot index
    word 2  purpose tag (segment / check / EOL, ...)
    word 3  ensemble tag (grid point, t_EC index, ...)

The 64-bit seed is the key.
"""
from __future__ import annotations

import math

import numpy as np

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = 0x9E3779B9
_W1 = 0xBB67AE85
_MASK32 = np.uint64(0xFFFFFFFF)
_SHIFT32 = np.uint64(32)

# purpose tags used by the simulators
TAG_JUMP = 1
TAG_LABEL = 2
TAG_KICK = 3
TAG_EOL = 4
TAG_PHASE = 5


def philox4x32(counter, key, rounds: int = 10):
    """Vectorised Philox4x32 block function.

    ``counter`` is a sequence of four broadcastable integer arrays, ``key``
    a pair of 32-bit integers.  Returns four ``uint64`` arrays holding
    32-bit outputs.
    """
    c0, c1, c2, c3 = np.broadcast_arrays(*(np.asarray(c, dtype=np.uint64) & _MASK32 for c in counter))
    c0, c1, c2, c3 = (c.copy() for c in (c0, c1, c2, c3))
    k0 = int(key[0]) & 0xFFFFFFFF
    k1 = int(key[1]) & 0xFFFFFFFF
    for _ in range(rounds):
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0, lo0 = p0 >> _SHIFT32, p0 & _MASK32
        hi1, lo1 = p1 >> _SHIFT32, p1 & _MASK32
        c0, c1, c2, c3 = (
            hi1 ^ c1 ^ np.uint64(k0),
            lo1,
            hi0 ^ c3 ^ np.uint64(k1),
            lo0,
        )
        k0 = (k0 + _W0) & 0xFFFFFFFF
        k1 = (k1 + _W1) & 0xFFFFFFFF
    return c0, c1, c2, c3


def seed_key(seed: int) -> tuple[int, int]:
    if seed < 0:
        raise ValueError("seed must be non-negative")
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    return seed & 0xFFFFFFFF, seed >> 32


def _to_unit(hi, lo):
    # 53-bit mantissa, shifted by half an ulp so that 0 is never returned
    a = hi >> np.uint64(5)
    b = lo >> np.uint64(6)
    return ((a * np.uint64(67108864) + b).astype(np.float64) + 0.5) / 9007199254740992.0


def uniform_pair(seed: int, draw, shot, tag, ensemble=0):
    """Two independent uniforms in (0, 1) for every broadcast counter."""
    w = philox4x32((draw, shot, tag, ensemble), seed_key(seed))
    return _to_unit(w[0], w[1]), _to_unit(w[2], w[3])


class RandomStream:
    """Sequential scalar view of one substream ``(seed, shot, tag, ensemble)``.

    Each call to :meth:`uniform_pair` consumes one counter value.  The
    vectorised ensemble code addresses the same counters directly, which is
    what lets a single trajectory be replayed outside an ensemble.
    """

    def __init__(self, seed: int, shot: int = 0, tag: int = TAG_JUMP, ensemble: int = 0):
        self.seed = int(seed)
        self.shot = int(shot)
        self.tag = int(tag)
        self.ensemble = int(ensemble)
        self.counter = 0

    def uniform_pair(self) -> tuple[float, float]:
        u, v = uniform_pair(self.seed, self.counter, self.shot, self.tag, self.ensemble)
        self.counter += 1
        return float(u), float(v)

    def uniform(self) -> float:
        return self.uniform_pair()[0]

    def normal(self) -> float:
        u, v = self.uniform_pair()
        return math.sqrt(-2.0 * math.log(u)) * math.cos(2.0 * math.pi * v)

    def spawn(self, shot: int) -> "RandomStream":
        return RandomStream(self.seed, shot, self.tag, self.ensemble)


def normal_array(seed: int, draw, shot, tag, ensemble=0):
    """Box-Muller standard normals, one per broadcast counter."""
    u, v = uniform_pair(seed, draw, shot, tag, ensemble)
    return np.sqrt(-2.0 * np.log(u)) * np.cos(2.0 * np.pi * v)
