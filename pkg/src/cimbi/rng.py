"""Counter-based random streams.

Every variate is a pure function of ``(seed, path_id, channel, counter)``:
the Philox4x32-10 block cipher is applied to a 128-bit counter built from
``(counter, channel, path_id)`` under a 64-bit key taken from ``seed``.
Results therefore do not depend on how paths are scheduled across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba as nb
import numpy as np

GAUSSIAN = 0
EXPONENTIAL = 1
UNIFORM = 2
ATOM_SELECT = 3
CHANNELS = ("gaussian", "exponential", "uniform", "atom_select")

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK32 = np.uint64(0xFFFFFFFF)
_SHIFT32 = np.uint64(32)
_INV53 = 1.0 / 9007199254740992.0  # 2**-53


@nb.njit(cache=True, nogil=True)
def philox4x32(c0, c1, c2, c3, k0, k1):
    """Philox4x32-10 on a 4-word counter and 2-word key (all uint64 holding 32-bit words)."""
    for r in range(10):
        if r > 0:
            k0 = (k0 + _W0) & _MASK32
            k1 = (k1 + _W1) & _MASK32
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0 = p0 >> _SHIFT32
        lo0 = p0 & _MASK32
        hi1 = p1 >> _SHIFT32
        lo1 = p1 & _MASK32
        c0 = hi1 ^ c1 ^ k0
        c1 = lo1
        c2 = hi0 ^ c3 ^ k1
        c3 = lo0
    return c0, c1, c2, c3


@nb.njit(cache=True, nogil=True)
def _block(key0, key1, path_id, channel, counter):
    pid = np.uint64(path_id)
    ctr = np.uint64(counter)
    c0 = ctr & _MASK32
    c1 = (np.uint64(channel) & np.uint64(0xFF)) | (((ctr >> _SHIFT32) & np.uint64(0xFFFFFF)) << np.uint64(8))
    c2 = pid & _MASK32
    c3 = pid >> _SHIFT32
    return philox4x32(c0, c1, c2, c3, np.uint64(key0), np.uint64(key1))


@nb.njit(cache=True, nogil=True)
def _to_open_unit(hi, lo):
    k = ((hi >> np.uint64(5)) << np.uint64(26)) | (lo >> np.uint64(6))
    return (float(k) + 0.5) * _INV53


@nb.njit(cache=True, nogil=True)
def uniform_at(key0, key1, path_id, channel, counter):
    """Uniform variate on the open interval (0, 1)."""
    w0, w1, _, _ = _block(key0, key1, path_id, channel, counter)
    return _to_open_unit(w0, w1)


@nb.njit(cache=True, nogil=True)
def normal_at(key0, key1, path_id, counter):
    """Standard normal variate (Box-Muller on one Philox block)."""
    w0, w1, w2, w3 = _block(key0, key1, path_id, GAUSSIAN, counter)
    u1 = _to_open_unit(w0, w1)
    u2 = _to_open_unit(w2, w3)
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


@nb.njit(cache=True, nogil=True)
def exponential_at(key0, key1, path_id, counter):
    """Unit-rate exponential variate."""
    return -math.log(uniform_at(key0, key1, path_id, EXPONENTIAL, counter))


def split_seed(seed: int) -> tuple[int, int]:
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    return seed & 0xFFFFFFFF, seed >> 32


@dataclass
class RandomStream:
    """Per-path random stream with one draw counter per channel.

    ``counters`` is ``[gaussian, exponential, uniform, atom_select]``. The
    simulation kernels share this layout, so a stream can be handed to a
    kernel and its counters read back afterwards.
    """

    seed: int
    path_id: int = 0
    counters: np.ndarray = field(default_factory=lambda: np.zeros(4, dtype=np.int64))

    def __post_init__(self):
        if not 0 <= int(self.path_id) < 2**64:
            raise ValueError("path_id must be a 64-bit unsigned integer")
        self.counters = np.asarray(self.counters, dtype=np.int64).copy()

    @property
    def key(self) -> tuple[int, int]:
        return split_seed(self.seed)

    def normal(self) -> float:
        k0, k1 = self.key
        v = normal_at(k0, k1, self.path_id, self.counters[GAUSSIAN])
        self.counters[GAUSSIAN] += 1
        return v

    def exponential(self) -> float:
        k0, k1 = self.key
        v = exponential_at(k0, k1, self.path_id, self.counters[EXPONENTIAL])
        self.counters[EXPONENTIAL] += 1
        return v

    def uniform(self, channel: int = UNIFORM) -> float:
        k0, k1 = self.key
        v = uniform_at(k0, k1, self.path_id, channel, self.counters[channel])
        self.counters[channel] += 1
        return v

    def fork(self, path_id: int) -> "RandomStream":
        return RandomStream(self.seed, path_id)
