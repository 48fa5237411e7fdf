"""Little-endian binary codec shared by dataset containers and checkpoints."""
import math
import struct
from typing import Tuple

import numpy as np


class FormatError(Exception):
    """Base class for unreadable container / checkpoint files."""
    pass


class MagicMismatch(FormatError):
    pass


class VersionMismatch(FormatError):
    pass


class TruncatedPayload(FormatError):
    pass


class BadText(FormatError):
    pass


class Writer:
    """Accumulates little-endian fields."""

    def __init__(self):
        self._chunks = []

    def raw(self, data: bytes) -> None:
        self._chunks.append(bytes(data))

    def u8(self, v: int) -> None:
        self.raw(struct.pack('<B', v))

    def u16(self, v: int) -> None:
        self.raw(struct.pack('<H', v))

    def u32(self, v: int) -> None:
        self.raw(struct.pack('<I', v))

    def u64(self, v: int) -> None:
        self.raw(struct.pack('<Q', v))

    def text(self, s: str, width: str = 'u32') -> None:
        data = s.encode('utf-8')
        getattr(self, width)(len(data))
        self.raw(data)

    def array(self, arr: np.ndarray, dtype: str) -> None:
        self.raw(np.ascontiguousarray(arr, dtype=dtype).tobytes())

    def getvalue(self) -> bytes:
        return b''.join(self._chunks)


class Reader:
    """Sequential reader; running past the end raises TruncatedPayload."""

    def __init__(self, data: bytes, what: str = 'file'):
        self._data = data
        self._pos = 0
        self._what = what

    def take(self, n: int) -> bytes:
        end = self._pos + n
        if n < 0 or end > len(self._data):
            raise TruncatedPayload(
                f'{self._what}: needed {n} bytes at offset {self._pos}, '
                f'only {len(self._data) - self._pos} left')
        chunk = self._data[self._pos:end]
        self._pos = end
        return chunk

    def _unpack(self, fmt: str) -> int:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))[0]

    def u8(self) -> int:
        return self._unpack('<B')

    def u16(self) -> int:
        return self._unpack('<H')

    def u32(self) -> int:
        return self._unpack('<I')

    def u64(self) -> int:
        return self._unpack('<Q')

    def text(self, width: str = 'u32') -> str:
        n = getattr(self, width)()
        start = self._pos
        raw = self.take(n)
        try:
            return raw.decode('utf-8')
        except UnicodeDecodeError as e:
            raise BadText(f'{self._what}: invalid UTF-8 at byte offset {start + e.start}') from None

    def array(self, shape: Tuple[int, ...], dtype: str) -> np.ndarray:
        count = math.prod(int(d) for d in shape)
        itemsize = np.dtype(dtype).itemsize
        raw = self.take(count * itemsize)
        try:
            return np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
        except (ValueError, OverflowError) as e:
            raise FormatError(f'{self._what}: cannot lay out payload as {shape}: {e}') from None

    @property
    def remaining(self) -> int:
        return len(self._data) - self._pos


def check_header(reader: Reader, magic: bytes, version: int) -> None:
    found = reader.take(len(magic))
    if found != magic:
        raise MagicMismatch(f'expected magic {magic!r}, found {found!r}')
    got = reader.u32()
    if got != version:
        raise VersionMismatch(f'unsupported format version {got} (expected {version})')
