"""Counter-based random streams.

Every Gaussian draw is a pure function of ``(master_seed, family, replica,
block)``, computed with the Philox4x32-10 block cipher.  A replica's stream is
therefore identical no matter how replicas are split across workers, and no
generator state is ever carried between calls.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)

# Stream families; one per independent source of randomness.
NOISE = 0
INIT = 1
AUX = 2
BRIDGE = 3


@njit(cache=True, inline="always")
def philox4x32(c0, c1, c2, c3, k0, k1):
    """Ten Philox4x32 rounds on a 128-bit counter with a 64-bit key (all uint64 holding 32 bits)."""
    for _ in range(10):
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0 = p0 >> _S32
        lo0 = p0 & _MASK
        hi1 = p1 >> _S32
        lo1 = p1 & _MASK
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
        k0 = (k0 + _W0) & _MASK
        k1 = (k1 + _W1) & _MASK
    return c0, c1, c2, c3


@njit(cache=True, inline="always")
def uniform_triple(k0, k1, family, replica, block):
    """Three uniforms on [0, 1) for one counter block (32-bit resolution)."""
    b = np.uint64(block)
    x0, x1, x2, _ = philox4x32(b & _MASK, b >> _S32, np.uint64(replica) & _MASK,
                               np.uint64(family) & _MASK, k0, k1)
    return x0 / 4294967296.0, x1 / 4294967296.0, x2 / 4294967296.0


@njit(cache=True, inline="always")
def gaussian_pair(k0, k1, family, replica, block):
    """Two independent standard normals for one counter block (Box-Muller)."""
    b = np.uint64(block)
    x0, x1, x2, x3 = philox4x32(b & _MASK, b >> _S32, np.uint64(replica) & _MASK,
                                np.uint64(family) & _MASK, k0, k1)
    # 53-bit uniforms; u1 in (0, 1] keeps the log finite
    u1 = 1.0 - ((x0 >> np.uint64(5)) * 67108864.0 + (x1 >> np.uint64(6))) / 9007199254740992.0
    u2 = ((x2 >> np.uint64(5)) * 67108864.0 + (x3 >> np.uint64(6))) / 9007199254740992.0
    r = np.sqrt(-2.0 * np.log(u1))
    return r * np.cos(2.0 * np.pi * u2), r * np.sin(2.0 * np.pi * u2)


def split_seed(master_seed: int) -> tuple[np.uint64, np.uint64]:
    """Philox key halves from a 64-bit seed."""
    s = int(master_seed) & 0xFFFFFFFFFFFFFFFF
    return np.uint64(s & 0xFFFFFFFF), np.uint64(s >> 32)


@njit(cache=True)
def _fill_normals(k0, k1, family, replicas, first_block, n_blocks, out):
    for r in range(replicas.shape[0]):
        for j in range(n_blocks):
            g0, g1 = gaussian_pair(k0, k1, family, replicas[r], first_block + j)
            out[r, 2 * j] = g0
            out[r, 2 * j + 1] = g1


@dataclass(frozen=True)
class Streams:
    """A set of per-replica streams sharing one master seed and family."""

    master_seed: int
    replicas: np.ndarray
    family: int = NOISE

    def __len__(self):
        return len(self.replicas)

    @property
    def key(self):
        return split_seed(self.master_seed)

    def with_family(self, family: int) -> "Streams":
        return Streams(self.master_seed, self.replicas, family)

    def subset(self, index) -> "Streams":
        return Streams(self.master_seed, self.replicas[index], self.family)

    def normals(self, count: int, first_block: int = 0) -> np.ndarray:
        """``count`` standard normals per replica, starting at a block offset.

        Block ``j`` of a stream always holds draws ``2j`` and ``2j + 1``.
        """
        n_blocks = (count + 1) // 2
        out = np.empty((len(self.replicas), 2 * n_blocks))
        k0, k1 = self.key
        _fill_normals(k0, k1, np.uint64(self.family), self.replicas, np.uint64(first_block),
                      n_blocks, out)
        return out[:, :count]


def make_streams(master_seed: int, replica_count: int, family: int = NOISE,
                 first_replica: int = 0) -> Streams:
    """Streams for replicas ``first_replica .. first_replica + replica_count - 1``."""
    if replica_count < 1:
        raise ValueError("replica_count must be >= 1")
    idx = np.arange(first_replica, first_replica + replica_count, dtype=np.uint64)
    return Streams(int(master_seed), idx, family)


def derive_seed(master_seed: int, *tags: int) -> int:
    """Child seed for an independent sub-experiment, via numpy's SeedSequence hashing."""
    ss = np.random.SeedSequence([int(master_seed) & 0xFFFFFFFFFFFFFFFF, *map(int, tags)])
    return int(ss.generate_state(1, np.uint64)[0])
