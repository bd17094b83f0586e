"""Counter-based random streams.

Every variate is a pure function of ``(master_seed, purpose, role)`` (the
stream key) and a counter ``(step, block, replica)``.  Replicas can therefore
be simulated in any order, in any batch size, on any number of workers and
still see exactly the same numbers.

The bit generator is Philox4x64-10, evaluated with numpy over arrays of
counters.  It reproduces ``numpy.random.Philox`` bit for bit.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from functools import cached_property

import numpy as np

_M0 = np.uint64(0xD2E7470EE14C6C93)
_M1 = np.uint64(0xCA5A826395121157)
_W0 = np.uint64(0x9E3779B97F4A7C15)
_W1 = np.uint64(0xBB67AE8584CAA73B)
_LO32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
_S12 = np.uint64(12)
_ROUNDS = 10


def _mulhilo(a: np.uint64, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a_lo, a_hi = a & _LO32, a >> _S32
    b_lo, b_hi = b & _LO32, b >> _S32
    ll = a_lo * b_lo
    lh = a_lo * b_hi
    hl = a_hi * b_lo
    hh = a_hi * b_hi
    mid = (ll >> _S32) + (lh & _LO32) + (hl & _LO32)
    hi = hh + (lh >> _S32) + (hl >> _S32) + (mid >> _S32)
    return hi, a * b


def philox4x64(counter, key) -> np.ndarray:
    """Philox4x64-10 block function.

    ``counter`` has shape (..., 4) and ``key`` shape (2,); both uint64.
    Returns the (..., 4) uint64 output words.
    """
    c = np.asarray(counter, dtype=np.uint64)
    c0, c1, c2, c3 = c[..., 0], c[..., 1], c[..., 2], c[..., 3]
    k0, k1 = np.uint64(key[0]), np.uint64(key[1])
    with np.errstate(over="ignore"):
        for r in range(_ROUNDS):
            if r:
                k0 = k0 + _W0
                k1 = k1 + _W1
            hi0, lo0 = _mulhilo(_M0, c0)
            hi1, lo1 = _mulhilo(_M1, c2)
            c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
    return np.stack([c0, c1, c2, c3], axis=-1)


def to_open_unit(words: np.ndarray) -> np.ndarray:
    """Map uint64 words to doubles strictly inside (0, 1)."""
    return ((words >> _S12).astype(np.float64) + 0.5) * 2.0**-52


def _label_code(label: str) -> int:
    return zlib.crc32(label.encode("utf-8"))


def stream_key(master_seed: int, purpose: str, role: str = "main") -> np.ndarray:
    seq = np.random.SeedSequence([master_seed & 0xFFFFFFFFFFFFFFFF, _label_code(purpose), _label_code(role)])
    return seq.generate_state(2, dtype=np.uint64)


def uniform_blocks(key, step, block, replica) -> np.ndarray:
    """Four uniforms per counter; arguments broadcast against each other.

    Output shape is ``broadcast(step, block, replica).shape + (4,)``.
    """
    step, block, replica = np.broadcast_arrays(
        np.asarray(step, dtype=np.uint64),
        np.asarray(block, dtype=np.uint64),
        np.asarray(replica, dtype=np.uint64),
    )
    counter = np.stack([step, block, replica, np.zeros_like(step)], axis=-1)
    return to_open_unit(philox4x64(counter, key))


@dataclass(frozen=True)
class SeededStream:
    """A labelled stream: (master seed, purpose tag, replica index, chain role).

    ``uniforms(step, block)`` is the counter-based interface used by the
    chains; ``generator()`` hands out an ordinary numpy ``Generator`` for
    bulk work such as adding observation noise.
    """

    master_seed: int
    purpose: str
    replica: int = 0
    role: str = "main"

    @cached_property
    def key(self) -> np.ndarray:
        return stream_key(self.master_seed, self.purpose, self.role)

    def uniforms(self, step, block=0) -> np.ndarray:
        return uniform_blocks(self.key, step, block, self.replica)

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(
            [self.master_seed & 0xFFFFFFFFFFFFFFFF, _label_code(self.purpose), _label_code(self.role), self.replica]
        )
        return np.random.Generator(np.random.Philox(seq))

    def with_replica(self, replica: int) -> "SeededStream":
        return SeededStream(self.master_seed, self.purpose, replica, self.role)
