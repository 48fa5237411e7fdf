"""Deterministic random streams shared by every superinfo component.

The generator is xoshiro256++ (four 64-bit words, 256 bits of state).
Seeding and every transform on top of the raw 64-bit outputs are spelled
out here so another implementation can reproduce a stream bit for bit:

- seed expansion: four successive splitmix64 outputs from the 64-bit seed
  fill words s0..s3; no outputs are discarded
- step: ``out = rotl(s0 + s3, 23) + s0``, then ``t = s1 << 17``,
  ``s2 ^= s0; s3 ^= s1; s1 ^= s2; s0 ^= s3; s2 ^= t; s3 = rotl(s3, 45)``
- uniform doubles: ``(x >> 11) * 2**-53``
- normals: Box-Muller on consecutive uniform pairs (u1, u2), emitting
  ``r*cos(2*pi*u2)`` then ``r*sin(2*pi*u2)`` with ``r = sqrt(-2 ln(1 - u1))``
- sub-streams: ``splitmix64(seed ^ blake2b64(name))`` seeds a fresh Rng
- state bytes: s0..s3 as little-endian u64
"""
import hashlib
import struct
from typing import Tuple, Union

import numpy as np

MASK64 = (1 << 64) - 1
STATE_BYTES = 32
_DOUBLE_SCALE = 2.0 ** -53


def splitmix64(x: int) -> Tuple[int, int]:
    """Advance a splitmix64 state; returns (new_state, output)."""
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return x, z ^ (z >> 31)


def _name_hash(name: str) -> int:
    digest = hashlib.blake2b(name.encode('utf-8'), digest_size=8).digest()
    return struct.unpack('<Q', digest)[0]


def xoshiro256pp(state: Tuple[int, int, int, int], n: int) -> Tuple[np.ndarray, Tuple[int, ...]]:
    """``n`` raw outputs from ``state``; returns (uint64 outputs, next state)."""
    s0, s1, s2, s3 = state
    out = [0] * n
    for i in range(n):
        a = (s0 + s3) & MASK64
        out[i] = ((((a << 23) | (a >> 41)) & MASK64) + s0) & MASK64
        t = (s1 << 17) & MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = ((s3 << 45) | (s3 >> 19)) & MASK64
    return np.array(out, dtype=np.uint64), (s0, s1, s2, s3)


class Rng:
    """Seeded random stream with an exportable 32-byte state."""

    def __init__(self, seed: int = 0):
        self.seed = int(seed) & MASK64
        x = self.seed
        words = []
        for _ in range(4):
            x, out = splitmix64(x)
            words.append(out)
        self._state = tuple(words)

    # ── state ────────────────────────────────────────────────────────────────

    def state_bytes(self) -> bytes:
        return struct.pack('<4Q', *self._state)

    @classmethod
    def from_state_bytes(cls, raw: bytes, seed: int = 0) -> 'Rng':
        if len(raw) != STATE_BYTES:
            raise ValueError(f'rng state must be {STATE_BYTES} bytes, got {len(raw)}')
        words = struct.unpack('<4Q', raw)
        if not any(words):
            raise ValueError('rng state is all zero')
        rng = cls.__new__(cls)
        rng.seed = int(seed) & MASK64
        rng._state = words
        return rng

    def substream(self, name: str) -> 'Rng':
        """Independent stream keyed by ``name``; does not advance this stream."""
        _, derived = splitmix64(self.seed ^ _name_hash(name))
        return Rng(derived)

    # ── draws ────────────────────────────────────────────────────────────────

    def next_u64(self, n: int) -> np.ndarray:
        out, self._state = xoshiro256pp(self._state, int(n))
        return out

    def uniform(self, shape: Union[int, Tuple[int, ...]], lo: float = 0.0,
                hi: float = 1.0) -> np.ndarray:
        if lo > hi:
            raise ValueError(f'uniform: lo={lo} > hi={hi}')
        shape = _as_shape(shape)
        n = int(np.prod(shape, dtype=np.int64))
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * _DOUBLE_SCALE
        return (lo + (hi - lo) * u).reshape(shape)

    def normal(self, shape: Union[int, Tuple[int, ...]], mean: float = 0.0,
               std: float = 1.0) -> np.ndarray:
        if std < 0:
            raise ValueError(f'normal: std must be >= 0, got {std}')
        shape = _as_shape(shape)
        n = int(np.prod(shape, dtype=np.int64))
        pairs = (n + 1) // 2
        u = self.uniform(2 * pairs).reshape(pairs, 2)
        radius = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
        angle = 2.0 * np.pi * u[:, 1]
        z = np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=1).reshape(-1)
        return (mean + std * z[:n]).reshape(shape)

    def integers(self, n: int, high: int) -> np.ndarray:
        """``n`` integers uniform on [0, high)."""
        return np.floor(self.uniform(n) * high).astype(np.int64)

    def permutation(self, n: int) -> np.ndarray:
        perm = np.arange(n, dtype=np.int64)
        if n < 2:
            return perm
        u = self.uniform(n - 1)
        for k, i in enumerate(range(n - 1, 0, -1)):
            j = int(u[k] * (i + 1))
            perm[i], perm[j] = perm[j], perm[i]
        return perm

    def __repr__(self):
        return f'<Rng seed={self.seed}>'


def _as_shape(shape) -> Tuple[int, ...]:
    if isinstance(shape, (int, np.integer)):
        return (int(shape),)
    return tuple(int(d) for d in shape)
